"""Command-line pipeline: evaluate, track, fit, observer-stats."""

from __future__ import annotations

import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import growth, linking, metrics, report
from .eda import OptimizerConfig
from .morphology import connected_components, filter_components
from .volume import NiftiFormatError, parse_nifti, voxel_volume_cc

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


def _load(path):
    try:
        return parse_nifti(Path(path).read_bytes())
    except (OSError, NiftiFormatError) as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PGX_THREADS", "1")))
    except ValueError:
        return 1


@click.group()
def main():
    """Tumor segmentation evaluation, longitudinal tracking, and growth fitting."""


@main.command()
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vessels", "vessels_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--min-cc", default=linking.MIN_COMPONENT_CC, show_default=True,
              help="Discard prediction components below this volume (cc).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def evaluate(ref_path, pred_path, vessels_path, min_cc, out_path):
    """Per-tumor metrics between a prediction and a reference mask.

    Linking uses the reference as-is (vessels not subtracted); metrics use
    the vessel-subtracted reference when a vessels mask is given. Writes a
    CSV of per-tumor metrics plus a link summary JSON next to it.
    """
    ref = _load(ref_path)
    pred = _load(pred_path)
    if ref.dims != pred.dims:
        raise click.ClickException(
            f"grid mismatch: reference {ref.dims} vs prediction {pred.dims}")
    metric_ref_voxels = ref.voxels
    if vessels_path:
        vessels = _load(vessels_path)
        if vessels.dims != ref.dims:
            raise click.ClickException(
                f"grid mismatch: reference {ref.dims} vs vessels {vessels.dims}")
        metric_ref_voxels = np.where(vessels.voxels != 0, 0, ref.voxels)

    links = linking.link_pred_to_ref(pred, ref, min_volume=min_cc)
    pred_comps = {c.id: c for c in connected_components(pred)}
    ref_comps = {c.id: c for c in connected_components(ref)}
    vox_cc = voxel_volume_cc(ref.spacing)

    rows = []
    for pid, rid in links.matches:
        pc, rc = pred_comps[pid], ref_comps[rid]
        # vessel-subtracted reference voxels of this matched component
        ref_set = {tuple(v) for v in rc.voxel_indices
                   if metric_ref_voxels[tuple(v)] != 0}
        if not ref_set:
            click.echo(f"tumor {rid}: fully vessel-subtracted, skipped", err=True)
            continue
        pair = metrics.MaskPair(ref_set, pc.voxel_set(), ref.spacing, ref.dims)
        sd = metrics.surface_distances(pair)
        rows.append({
            "tumor_id": rid,
            "dice": metrics.dice(pair),
            "hd95_mm": metrics.hausdorff95(sd),
            "asd_mm": metrics.avg_surface_distance(sd),
            "vol_diff_pct": metrics.relative_volume_error(
                len(ref_set) * vox_cc, pc.volume_cc),
        })
    report.write_csv(out_path, ["tumor_id", "dice", "hd95_mm", "asd_mm", "vol_diff_pct"], rows)
    report.write_json(Path(out_path).with_suffix(".links.json"), links.to_json_dict())
    if links.discarded_predictions:
        click.echo(f"discarded {len(links.discarded_predictions)} prediction "
                   f"component(s) below {min_cc} cc", err=True)


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--min-cc", default=linking.MIN_COMPONENT_CC, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def track(manifest_path, min_cc, out_path):
    """Track tumors over time for every patient in a cohort manifest.

    Writes a series CSV with anomaly flags and treatment censoring applied,
    and prints one summary line per patient.
    """
    doc = json.loads(Path(manifest_path).read_text())
    manifest = linking.CohortManifest.from_json_dict(doc)
    rows = []
    for patient in manifest.patients:
        series = linking.track_tumors(patient, min_volume=min_cc)
        flagged = 0
        fittable = 0
        for s in series:
            s = linking.flag_anomalies(s)
            s = linking.censor_after_treatment(s, patient.treatments)
            flagged += bool(s.flags)
            fittable += len(s.samples) >= linking.MIN_FIT_SAMPLES
            flag_by_index = {f.index: f for f in s.flags}
            for i, (age, vol) in enumerate(s.samples):
                f = flag_by_index.get(i)
                rows.append({
                    "patient_id": patient.patient_id,
                    "tumor_id": s.tumor_id,
                    "age_years": age,
                    "volume_cc": vol,
                    "flags": f.kind if f else "",
                    "censored": s.censored_from if s.censored_from is not None else "",
                })
        click.echo(f"{patient.patient_id}: {len(series)} series, {flagged} flagged, "
                   f"{fittable} with >= {linking.MIN_FIT_SAMPLES} samples")
    report.write_csv(out_path,
                     ["patient_id", "tumor_id", "age_years", "volume_cc", "flags", "censored"],
                     rows)


def _read_series_csv(path):
    series = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["patient_id"], row["tumor_id"])
            series.setdefault(key, []).append(
                (float(row["age_years"]), float(row["volume_cc"])))
    return series


@main.command()
@click.option("--series", "series_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--models", default=",".join(growth.MODEL_KINDS), show_default=True,
              help="Comma-separated growth models to fit.")
@click.option("--budget-evals", default=50_000, show_default=True)
@click.option("--budget-seconds", default=90.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False),
              help="Aggregate report CSV; fits JSON and box-plot PNG land next to it.")
def fit(series_path, models, budget_evals, budget_seconds, seed, out_path):
    """Fit growth curves to every tumor series and write the fit report."""
    kinds = [m.strip().lower() for m in models.split(",") if m.strip()]
    unknown = [k for k in kinds if k not in growth.MODEL_KINDS]
    if unknown:
        raise click.ClickException(f"unknown model(s): {', '.join(unknown)}")
    all_series = _read_series_csv(series_path)
    jobs = []
    for idx, (key, samples) in enumerate(sorted(all_series.items())):
        if len(samples) < 3:
            click.echo(f"warning: {key[0]}/{key[1]} has {len(samples)} sample(s), "
                       "skipped (need 3)", err=True)
            continue
        for j, kind in enumerate(kinds):
            cfg = OptimizerConfig(max_evaluations=budget_evals,
                                  time_budget_seconds=budget_seconds,
                                  seed=seed + 1000 * idx + j)
            jobs.append((key, kind, samples, cfg))

    def run(job):
        key, kind, samples, cfg = job
        return key, growth.fit_model(samples, kind, config=cfg)

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(run, jobs))

    fits_doc = [
        {"patient_id": key[0], "tumor_id": key[1], **f.to_json_dict()}
        for key, f in results
    ]
    report.write_json(Path(out_path).with_suffix(".fits.json"), fits_doc)
    fits = [f for _, f in results]
    rows = growth.aggregate_report(fits)
    report.write_csv(out_path, ["model", "n", "rmse_min", "rmse_q1", "rmse_median",
                                "rmse_q3", "rmse_max", "rmse_outliers",
                                "implausible_v100", "pinned_at_cap"], rows)
    if fits:
        by_kind = {k: [f.rmse for f in fits if f.kind == k] for k in kinds}
        outliers = {r["model"]: r["rmse_outliers"] for r in rows}
        report.render_rmse_boxplot(Path(out_path).with_suffix(".png"), by_kind, outliers)


@main.command("observer-stats")
@click.option("--pairs", "pairs_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="CSV with columns comparison,a,b: one paired value per row.")
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def observer_stats(pairs_path, alpha, out_path):
    """Wilcoxon signed rank tests per comparison with Holm correction."""
    groups = {}
    with open(pairs_path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["comparison"], []).append(
                (float(row["a"]), float(row["b"])))
    if not groups or any(len(v) < 1 for v in groups.values()):
        raise click.ClickException("each comparison needs at least one pair")
    names = sorted(groups)
    tests = [metrics.wilcoxon_signed_rank(groups[n]) for n in names]
    rejects = metrics.holm_correction([p for _, p in tests], alpha)
    rows = [
        {"comparison": n, "n_pairs": len(groups[n]), "W": w, "p": p,
         "reject": str(rej).lower()}
        for n, (w, p), rej in zip(names, tests, rejects)
    ]
    report.write_csv(out_path, ["comparison", "n_pairs", "W", "p", "reject"], rows)


def run():
    """Entry point mapping errors to exit codes (1 input, 2 internal)."""
    try:
        main.main(standalone_mode=False)
    except (click.ClickException, linking.ManifestError, NiftiFormatError, ValueError) as exc:
        msg = exc.format_message() if isinstance(exc, click.ClickException) else str(exc)
        click.echo(f"error: {msg}", err=True)
        sys.exit(EXIT_INPUT)
    except click.Abort:
        sys.exit(EXIT_INPUT)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    run()
