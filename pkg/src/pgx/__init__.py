"""Post-segmentation tumor analysis: volumes, metrics, tracking, growth fits."""

from .volume import (
    AffineTransform,
    LabelVolume,
    NiftiFormatError,
    VoxelSpacing,
    parse_nifti,
    voxel_volume_cc,
    write_nifti,
)

__all__ = [
    "AffineTransform",
    "LabelVolume",
    "NiftiFormatError",
    "VoxelSpacing",
    "parse_nifti",
    "voxel_volume_cc",
    "write_nifti",
]

__version__ = "0.1.0"
