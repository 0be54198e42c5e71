"""Overlap and surface-distance metrics, distance maps, and observer statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .morphology import surface_voxels
from .volume import VoxelSpacing


@dataclass(frozen=True)
class MaskPair:
    """Two voxel sets on the same grid."""

    reference: set
    prediction: set
    spacing: VoxelSpacing
    dims: tuple

    def __post_init__(self):
        for name, s in (("reference", self.reference), ("prediction", self.prediction)):
            for v in s:
                if not all(0 <= v[i] < self.dims[i] for i in range(3)):
                    raise ValueError(f"{name} voxel {v} outside grid {self.dims}")


@dataclass(frozen=True)
class SurfaceDistanceSet:
    """Closest-contour distances in mm, one entry per surface voxel, both directions."""

    d_ref_to_pred: np.ndarray
    d_pred_to_ref: np.ndarray

    def pooled(self) -> np.ndarray:
        return np.concatenate([self.d_ref_to_pred, self.d_pred_to_ref])


def dice(pair: MaskPair) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|)."""
    a, b = pair.reference, pair.prediction
    if not a and not b:
        raise ValueError("undefined Dice: both masks empty")
    return 2.0 * len(a & b) / (len(a) + len(b))


def _surface_mm(voxel_set: set, dims, spacing: VoxelSpacing) -> np.ndarray:
    surf = surface_voxels(voxel_set, dims)
    return np.array(sorted(surf), dtype=float) * spacing.as_array()


def surface_distances(pair: MaskPair) -> SurfaceDistanceSet:
    """Exact nearest-contour distances between voxel centers, in mm."""
    if not pair.reference or not pair.prediction:
        raise ValueError("surface distances need two non-empty masks")
    ref_pts = _surface_mm(pair.reference, pair.dims, pair.spacing)
    pred_pts = _surface_mm(pair.prediction, pair.dims, pair.spacing)
    ref_tree = cKDTree(ref_pts)
    pred_tree = cKDTree(pred_pts)
    d_ref, _ = pred_tree.query(ref_pts)
    d_pred, _ = ref_tree.query(pred_pts)
    return SurfaceDistanceSet(np.atleast_1d(d_ref), np.atleast_1d(d_pred))


def hausdorff95(sd: SurfaceDistanceSet) -> float:
    """95th percentile of the pooled two-direction distances (linear interpolation)."""
    return float(np.percentile(sd.pooled(), 95))


def avg_surface_distance(sd: SurfaceDistanceSet) -> float:
    """Mean of the pooled two-direction distances; symmetric by construction."""
    return float(np.mean(sd.pooled()))


def relative_volume_error(ref_cc: float, pred_cc: float) -> float:
    """Absolute volume difference as a percentage of the reference."""
    if ref_cc <= 0:
        raise ValueError("reference volume must be positive")
    return 100.0 * abs(pred_cc - ref_cc) / ref_cc


def normalized_volume_difference(v1: float, v2: float) -> float:
    """Absolute volume difference normalized by the pair mean, in percent."""
    if v1 + v2 <= 0:
        raise ValueError("at least one volume must be positive")
    return 100.0 * abs(v1 - v2) / ((v1 + v2) / 2.0)


def distance_map(pair: MaskPair) -> list:
    """Signed closest-contour distance for every surface voxel of the prediction.

    Positive where the voxel lies outside the reference mask (growth),
    negative inside (decline). Returns [(voxel, signed mm), ...].
    """
    if not pair.reference or not pair.prediction:
        raise ValueError("distance map needs two non-empty masks")
    ref_surf = _surface_mm(pair.reference, pair.dims, pair.spacing)
    pred_surf = sorted(surface_voxels(pair.prediction, pair.dims))
    tree = cKDTree(ref_surf)
    pts = np.array(pred_surf, dtype=float) * pair.spacing.as_array()
    d, _ = tree.query(pts)
    out = []
    for vox, dist in zip(pred_surf, np.atleast_1d(d)):
        sign = -1.0 if vox in pair.reference else 1.0
        out.append((vox, sign * float(dist)))
    return out


def wilcoxon_signed_rank(sample) -> tuple:
    """Wilcoxon signed rank test on (a, b) pairs; returns (W, two-sided p).

    Zero differences are dropped; ties get midranks; W = min(W+, W-).
    Exact p by enumerating all sign assignments when n <= 20, otherwise a
    normal approximation with tie-corrected variance and continuity
    correction. All-zero differences give p = 1.
    """
    pairs = np.asarray(list(sample), dtype=float)
    if len(pairs) < 1:
        raise ValueError("need at least one pair")
    d = pairs[:, 0] - pairs[:, 1]
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= 20:
        p = _exact_p(ranks, w)
    else:
        p = _normal_p(d, ranks, w)
    return w, min(1.0, p)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks: np.ndarray, w: float) -> float:
    # distribution of the positive-rank sum over all 2^n sign assignments
    n = len(ranks)
    total = 1 << n
    sums = np.zeros(1)
    for r in ranks:
        sums = np.concatenate([sums, sums + r])
    rank_total = ranks.sum()
    count = int(np.sum(sums <= w + 1e-12)) + int(np.sum(sums >= rank_total - w - 1e-12))
    return count / total


def _normal_p(d: np.ndarray, ranks: np.ndarray, w: float) -> float:
    from math import erf, sqrt

    n = len(d)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction over groups of equal |d|
    _, counts = np.unique(np.abs(d), return_counts=True)
    var -= np.sum(counts**3 - counts) / 48.0
    if var <= 0:
        return 1.0
    z = (w - mean + 0.5) / sqrt(var)
    return 2.0 * 0.5 * (1.0 + erf(z / sqrt(2.0)))


def holm_correction(p_values, alpha: float = 0.05) -> list:
    """Step-down Holm procedure; returns reject flags in the input order."""
    p = list(p_values)
    if not all(0.0 <= x <= 1.0 for x in p):
        raise ValueError("p values must lie in [0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    reject = [False] * m
    for step, i in enumerate(order):
        if p[i] <= alpha / (m - step):
            reject[i] = True
        else:
            break
    return reject
