"""Connected components, centroids, surfaces and nearest-neighbor resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import AffineTransform, LabelVolume, VoxelSpacing, voxel_volume_cc

CONNECTIVITIES = (6, 18, 26)

# scipy structuring elements: 6 = faces, 18 = faces+edges, 26 = full cube
_STRUCTS = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


def round_half_away(x):
    """Round to nearest integer, halves away from zero (unlike numpy's banker's rounding)."""
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class TumorComponent:
    """One connected component of nonzero voxels."""

    id: int
    voxel_indices: np.ndarray  # (N, 3) int array of (x, y, z)
    volume_cc: float
    centroid_index: tuple

    @property
    def voxel_count(self) -> int:
        return len(self.voxel_indices)

    def voxel_set(self) -> set:
        return {tuple(v) for v in self.voxel_indices}

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "voxel_count": self.voxel_count,
            "volume_cc": self.volume_cc,
            "centroid": list(self.centroid_index),
        }


def centroid_index(voxel_indices: np.ndarray) -> tuple:
    """Per-axis mean of voxel indices, rounded half-away-from-zero.

    May fall outside the component for concave shapes.
    """
    if len(voxel_indices) == 0:
        raise ValueError("empty component has no centroid")
    mean = np.asarray(voxel_indices, dtype=float).mean(axis=0)
    return tuple(int(c) for c in round_half_away(mean))


def connected_components(vol: LabelVolume, conn: int = 26) -> list:
    """Extract connected components of the nonzero voxels.

    Returned components are sorted by descending volume; ids are 1..k in
    that order (ties keep scan order for determinism).
    """
    if conn not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {conn}")
    labeled, n = ndimage.label(vol.voxels != 0, structure=_STRUCTS[conn])
    if n == 0:
        return []
    vox_cc = voxel_volume_cc(vol.spacing)
    raw = []
    for lab in range(1, n + 1):
        idx = np.argwhere(labeled == lab)
        raw.append((len(idx), lab, idx))
    raw.sort(key=lambda t: (-t[0], t[1]))
    components = []
    for new_id, (count, _lab, idx) in enumerate(raw, start=1):
        components.append(
            TumorComponent(
                id=new_id,
                voxel_indices=idx,
                volume_cc=count * vox_cc,
                centroid_index=centroid_index(idx),
            )
        )
    return components


def filter_components(components: list, min_volume: float) -> tuple:
    """Split components into (kept, discarded) at a volume threshold in cc."""
    if min_volume < 0:
        raise ValueError("min_volume must be >= 0")
    kept = [c for c in components if c.volume_cc >= min_volume]
    discarded = [c for c in components if c.volume_cc < min_volume]
    return kept, discarded


def surface_voxels(voxel_indices, dims) -> set:
    """Voxels of the set with a 6-neighbor outside the set or outside the grid."""
    voxel_indices = np.atleast_2d(np.asarray(list(voxel_indices), dtype=np.int64))
    if voxel_indices.size == 0:
        return set()
    mask = np.zeros(dims, dtype=bool)
    mask[tuple(voxel_indices.T)] = True
    # border_value=0 treats outside the grid as background
    interior = ndimage.binary_erosion(mask, structure=_STRUCTS[6], border_value=0)
    surf = np.argwhere(mask & ~interior)
    return {tuple(v) for v in surf}


def resample_nearest(moving: LabelVolume, transform: AffineTransform, dims, spacing: VoxelSpacing,
                     affine: AffineTransform = None) -> LabelVolume:
    """Pull the moving volume onto a reference grid by nearest-neighbor lookup.

    `transform` maps reference world coordinates to moving world coordinates.
    Output voxels that land outside the moving grid become background.
    """
    if affine is None:
        affine = AffineTransform.from_spacing(spacing)
    # reference index -> reference world -> moving world -> moving index
    full = moving.affine.inverse().compose(transform).compose(affine)
    nx, ny, nz = dims
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    pts = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1).astype(float)
    src = round_half_away(full.apply(pts))
    mx, my, mz = moving.dims
    inside = (
        (src[:, 0] >= 0) & (src[:, 0] < mx)
        & (src[:, 1] >= 0) & (src[:, 1] < my)
        & (src[:, 2] >= 0) & (src[:, 2] < mz)
    )
    out = np.zeros(nx * ny * nz, dtype=moving.voxels.dtype)
    s = src[inside]
    out[inside] = moving.voxels[s[:, 0], s[:, 1], s[:, 2]]
    return LabelVolume(voxels=out.reshape(dims), spacing=spacing, affine=affine)
