"""Intra-scan prediction/reference linking and longitudinal tumor tracking."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .morphology import connected_components, filter_components, resample_nearest
from .volume import AffineTransform, LabelVolume, parse_nifti

MIN_COMPONENT_CC = 0.1  # components below this are discarded before linking
LINK_DICE_FLOOR = 0.1
UP_THRESHOLD = 0.5  # relative increase flagged as anomalous
DOWN_THRESHOLD = 0.3  # relative decrease flagged as anomalous
MIN_FIT_SAMPLES = 3


class ManifestError(ValueError):
    """Raised when a cohort manifest violates its schema; message cites the JSON path."""


@dataclass(frozen=True)
class ScanRecord:
    path: str
    age_at_scan: float
    transform_to_previous: AffineTransform = None  # absent for the first scan


@dataclass(frozen=True)
class Treatment:
    age: float
    kind: str  # surgery | radiotherapy


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    scans: list
    treatments: list


@dataclass(frozen=True)
class CohortManifest:
    patients: list

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CohortManifest":
        patients = []
        for pi, p in enumerate(_require(doc, "patients", list, "$")):
            ppath = f"$.patients[{pi}]"
            pid = _require(p, "patient_id", str, ppath)
            scans = []
            prev_age = None
            for si, s in enumerate(_require(p, "scans", list, ppath)):
                spath = f"{ppath}.scans[{si}]"
                age = _require(s, "age_at_scan", (int, float), spath)
                if not 0 <= age <= 120:
                    raise ManifestError(f"{spath}.age_at_scan: {age} outside [0, 120]")
                if prev_age is not None and age <= prev_age:
                    raise ManifestError(f"{spath}.age_at_scan: scans not sorted by ascending age")
                prev_age = age
                tf = s.get("transform_to_previous")
                if si == 0:
                    transform = None
                else:
                    if tf is None:
                        raise ManifestError(f"{spath}.transform_to_previous: required after the first scan")
                    if not isinstance(tf, list) or len(tf) != 16:
                        raise ManifestError(f"{spath}.transform_to_previous: expected 16 numbers row-major")
                    transform = AffineTransform(np.array(tf, dtype=float).reshape(4, 4))
                scans.append(ScanRecord(_require(s, "path", str, spath), float(age), transform))
            treatments = []
            for ti, t in enumerate(p.get("treatments", [])):
                tpath = f"{ppath}.treatments[{ti}]"
                kind = _require(t, "kind", str, tpath)
                if kind not in ("surgery", "radiotherapy"):
                    raise ManifestError(f"{tpath}.kind: unknown treatment kind {kind!r}")
                treatments.append(Treatment(float(_require(t, "age", (int, float), tpath)), kind))
            patients.append(PatientRecord(pid, scans, treatments))
        return cls(patients)


def _require(obj, key, types, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{path}.{key}: missing")
    val = obj[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise ManifestError(f"{path}.{key}: wrong type {type(val).__name__}")
    return val


@dataclass(frozen=True)
class LinkResult:
    matches: list  # (prediction id, reference id); many-to-one allowed
    unmatched_predictions: list
    unmatched_references: list
    discarded_predictions: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "matches": [list(m) for m in self.matches],
            "unmatched_predictions": self.unmatched_predictions,
            "unmatched_references": self.unmatched_references,
            "discarded_predictions": self.discarded_predictions,
        }


@dataclass(frozen=True)
class DetectionCounts:
    true_positive: int
    false_positive: int
    false_negative: int
    precision: float = None  # absent when tp+fp == 0
    recall: float = None


@dataclass(frozen=True)
class AnomalyFlag:
    index: int
    kind: str  # big_increase | big_decrease
    relative_change: float


@dataclass(frozen=True)
class TumorTimeSeries:
    tumor_id: str
    samples: list  # (age years, volume cc), ages strictly increasing
    flags: list = field(default_factory=list)
    censored_from: float = None

    def __post_init__(self):
        ages = [a for a, _ in self.samples]
        if any(b <= a for a, b in zip(ages, ages[1:])):
            raise ValueError("sample ages must be strictly increasing")
        if any(v <= 0 for _, v in self.samples):
            raise ValueError("volumes must be positive")


def link_pred_to_ref(pred: LabelVolume, ref_with_vessels: LabelVolume,
                     min_volume: float = MIN_COMPONENT_CC, conn: int = 26) -> LinkResult:
    """Link prediction components to reference components by centroid lookup.

    The lookup uses the reference *without* the vessels subtracted so that a
    centroid landing on a vessel voxel still carries the tumor's label.
    """
    if pred.dims != ref_with_vessels.dims:
        raise ValueError(f"grid mismatch: prediction {pred.dims} vs reference {ref_with_vessels.dims}")
    pred_comps = connected_components(pred, conn)
    kept, discarded = filter_components(pred_comps, min_volume)
    ref_comps = connected_components(ref_with_vessels, conn)
    ref_grid = np.zeros(ref_with_vessels.dims, dtype=np.int32)
    for rc in ref_comps:
        ref_grid[tuple(rc.voxel_indices.T)] = rc.id
    matches, unmatched_pred = [], []
    for pc in kept:
        rid = int(ref_grid[pc.centroid_index])
        if rid > 0:
            matches.append((pc.id, rid))
        else:
            unmatched_pred.append(pc.id)
    matched_refs = {rid for _, rid in matches}
    unmatched_refs = [rc.id for rc in ref_comps if rc.id not in matched_refs]
    return LinkResult(matches, unmatched_pred, unmatched_refs, [c.id for c in discarded])


def detection_stats(tp: int, fp: int, fn: int) -> DetectionCounts:
    """Precision/recall from already-adjudicated counts; undefined ratios stay absent."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return DetectionCounts(tp, fp, fn, precision, recall)


def _scan_components(vol: LabelVolume, min_volume: float, conn: int):
    kept, _ = filter_components(connected_components(vol, conn), min_volume)
    return kept


def _component_label_volume(vol: LabelVolume, comps) -> LabelVolume:
    grid = np.zeros(vol.dims, dtype=np.int32)
    for c in comps:
        grid[tuple(c.voxel_indices.T)] = c.id
    return LabelVolume(voxels=grid, spacing=vol.spacing, affine=vol.affine)


def _pairwise_dice(earlier_comps, later_ids: LabelVolume):
    """Dice between earlier components and resampled later component ids."""
    later = later_ids.voxels
    sizes_later = {int(i): int(n) for i, n in
                   zip(*np.unique(later[later > 0], return_counts=True))}
    scores = []
    for ec in earlier_comps:
        labels = later[tuple(ec.voxel_indices.T)]
        labels = labels[labels > 0]
        if labels.size == 0:
            continue
        for lid, inter in zip(*np.unique(labels, return_counts=True)):
            lid = int(lid)
            d = 2.0 * int(inter) / (ec.voxel_count + sizes_later[lid])
            scores.append((d, ec.id, lid))
    return scores, sizes_later


def track_tumors(patient: PatientRecord, min_volume: float = MIN_COMPONENT_CC,
                 link_threshold: float = LINK_DICE_FLOOR, conn: int = 26,
                 load_mask=None) -> list:
    """Track tumors across a patient's time-ordered scans.

    Consecutive scan pairs are made comparable by resampling the later mask
    onto the earlier grid with the supplied affine; matching is greedy by
    descending Dice, one-to-one, with a floor. Volumes always come from each
    scan's native grid.
    """
    if load_mask is None:
        load_mask = lambda path: parse_nifti(Path(path).read_bytes())
    scans = patient.scans
    volumes = [load_mask(s.path) for s in scans]
    comps = [_scan_components(v, min_volume, conn) for v in volumes]

    # series as chains of (scan index, component id)
    open_series = {}  # (scan idx, comp id) -> list of (scan idx, comp id)
    finished = []
    for c in comps[0] if comps else []:
        open_series[(0, c.id)] = [(0, c.id)]
    for i in range(1, len(scans)):
        earlier, later = comps[i - 1], comps[i]
        tf = scans[i].transform_to_previous
        if tf is None:
            raise ManifestError(f"scan {i} of patient {patient.patient_id} lacks a transform")
        later_ids = resample_nearest(
            _component_label_volume(volumes[i], later), tf,
            volumes[i - 1].dims, volumes[i - 1].spacing, volumes[i - 1].affine)
        scores, _ = _pairwise_dice(earlier, later_ids)
        scores.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_e, used_l, links = set(), set(), {}
        for d, eid, lid in scores:
            if d < link_threshold or eid in used_e or lid in used_l:
                continue
            used_e.add(eid)
            used_l.add(lid)
            links[eid] = lid
        still_open = {}
        for key, chain in open_series.items():
            last_scan, last_id = chain[-1]
            nxt = links.get(last_id) if last_scan == i - 1 else None
            if nxt is not None:
                chain.append((i, nxt))
                still_open[(i, nxt)] = chain
            else:
                finished.append(chain)
        open_series = still_open
        for c in later:
            if (i, c.id) not in open_series:  # appearance starts a new series
                open_series[(i, c.id)] = [(i, c.id)]
    finished.extend(open_series.values())

    comp_by_id = [{c.id: c for c in cs} for cs in comps]
    series = []
    for chain in sorted(finished, key=lambda ch: (ch[0][0], ch[0][1])):
        first_scan, first_id = chain[0]
        samples = [(scans[si].age_at_scan, comp_by_id[si][cid].volume_cc) for si, cid in chain]
        series.append(TumorTimeSeries(f"{patient.patient_id}:s{first_scan}c{first_id}", samples))
    return series


def flag_anomalies(series: TumorTimeSeries, up_threshold: float = UP_THRESHOLD,
                   down_threshold: float = DOWN_THRESHOLD) -> TumorTimeSeries:
    """Flag big relative volume changes; samples are kept for human review."""
    if up_threshold <= 0 or down_threshold <= 0:
        raise ValueError("thresholds must be positive")
    flags = []
    vols = [v for _, v in series.samples]
    for i in range(1, len(vols)):
        change = (vols[i] - vols[i - 1]) / vols[i - 1]
        if change > up_threshold:
            flags.append(AnomalyFlag(i, "big_increase", change))
        elif change < -down_threshold:
            flags.append(AnomalyFlag(i, "big_decrease", change))
    return replace(series, flags=flags)


def censor_after_treatment(series: TumorTimeSeries, treatments) -> TumorTimeSeries:
    """Drop samples after the earliest treatment age."""
    if not treatments:
        return series
    cutoff = min(t.age for t in treatments)
    samples = [(a, v) for a, v in series.samples if a <= cutoff]
    flags = [f for f in series.flags if f.index < len(samples)]
    return replace(series, samples=samples, flags=flags, censored_from=cutoff)
