"""Label volumes in a NIfTI-1 subset, with voxel geometry metadata.

Only 3D integer label volumes are supported. The sform transform is the
single source of world coordinates; qform quaternions, intensity scaling,
extensions and compressed files are out of scope.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352

# accepted NIfTI datatype codes
DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8

_DTYPES = {DT_UINT8: np.uint8, DT_INT16: np.int16, DT_INT32: np.int32}
_BITPIX = {DT_UINT8: 8, DT_INT16: 16, DT_INT32: 32}


class NiftiFormatError(ValueError):
    """Raised when a byte stream is not a parseable NIfTI-1 label volume."""


@dataclass(frozen=True)
class VoxelSpacing:
    """Millimeters per voxel along each grid axis."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0 and self.dz > 0):
            raise ValueError(f"spacing must be strictly positive, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz], dtype=float)


def voxel_volume_cc(spacing: VoxelSpacing) -> float:
    """Volume of one voxel in cc (mm^3 / 1000)."""
    return spacing.dx * spacing.dy * spacing.dz / 1000.0


@dataclass(frozen=True)
class AffineTransform:
    """4x4 homogeneous transform from voxel indices to world millimeters."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got shape {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("affine last row must be (0, 0, 0, 1)")
        if abs(np.linalg.det(m[:3, :3])) < 1e-12:
            raise ValueError("affine upper-left 3x3 block is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4))

    @classmethod
    def from_spacing(cls, spacing: VoxelSpacing) -> "AffineTransform":
        return cls(np.diag([spacing.dx, spacing.dy, spacing.dz, 1.0]))

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """self applied after other."""
        return AffineTransform(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) coordinates through the transform."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]


@dataclass(frozen=True)
class LabelVolume:
    """Dense 3D grid of integer labels; 0 is background.

    Voxels are indexed [x, y, z]; serialized order is x-fastest.
    """

    voxels: np.ndarray
    spacing: VoxelSpacing
    affine: AffineTransform = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"voxels must be a non-empty 3D array, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.integer):
            raise ValueError("labels must be integers")
        if v.min() < 0 or v.max() > 65535:
            raise ValueError("labels must be in [0, 65535]")
        object.__setattr__(self, "voxels", v)
        if self.affine is None:
            object.__setattr__(self, "affine", AffineTransform.from_spacing(self.spacing))
        else:
            # spacing must agree with the affine's column norms
            norms = np.linalg.norm(self.affine.matrix[:3, :3], axis=0)
            if np.any(np.abs(norms - self.spacing.as_array()) > 1e-3):
                raise ValueError(
                    f"spacing {self.spacing} inconsistent with affine column norms {norms}"
                )

    @property
    def dims(self) -> tuple:
        return self.voxels.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.allclose(self.spacing.as_array(), other.spacing.as_array(), atol=1e-6)
            and np.allclose(self.affine.matrix, other.affine.matrix, atol=1e-6)
            and np.array_equal(self.voxels, other.voxels)
        )


def _read_header(data: bytes):
    if len(data) < HEADER_SIZE:
        raise NiftiFormatError(f"file too short for a NIfTI-1 header ({len(data)} bytes)")
    magic = data[344:348]
    if magic not in (b"n+1\0", b"ni1\0"):
        raise NiftiFormatError(f"bad magic {magic!r}")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack(order + "i", data[0:4])
        if sizeof_hdr == HEADER_SIZE:
            return order
    raise NiftiFormatError("sizeof_hdr is not 348 in either byte order")


def parse_nifti(data: bytes) -> LabelVolume:
    """Parse a single-file NIfTI-1 label volume (either endianness)."""
    order = _read_header(data)
    dim = struct.unpack(order + "8h", data[40:56])
    (datatype,) = struct.unpack(order + "h", data[70:72])
    pixdim = struct.unpack(order + "8f", data[76:108])
    (vox_offset,) = struct.unpack(order + "f", data[108:112])
    (sform_code,) = struct.unpack(order + "h", data[254:256])

    if dim[0] != 3:
        raise NiftiFormatError(f"only 3D volumes supported, dim[0]={dim[0]}")
    if datatype not in _DTYPES:
        raise NiftiFormatError(f"unsupported datatype code {datatype}")

    nx, ny, nz = dim[1], dim[2], dim[3]
    if nx < 1 or ny < 1 or nz < 1:
        raise NiftiFormatError(f"non-positive dims {(nx, ny, nz)}")
    spacing = VoxelSpacing(float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))

    if sform_code > 0:
        rows = [struct.unpack(order + "4f", data[off : off + 16]) for off in (280, 296, 312)]
        mat = np.vstack([np.array(rows, dtype=float), [0.0, 0.0, 0.0, 1.0]])
        affine = AffineTransform(mat)
    else:
        affine = AffineTransform.from_spacing(spacing)

    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(order)
    count = nx * ny * nz
    start = int(vox_offset)
    end = start + count * dtype.itemsize
    if len(data) < end:
        raise NiftiFormatError(f"truncated payload: need {end} bytes, have {len(data)}")
    raw = np.frombuffer(data[start:end], dtype=dtype)
    if raw.min() < 0 or raw.max() > 65535:
        raise NiftiFormatError("label values outside [0, 65535]")
    voxels = raw.astype(raw.dtype.newbyteorder("=")).reshape((nx, ny, nz), order="F")
    return LabelVolume(voxels=voxels, spacing=spacing, affine=affine)


def write_nifti(vol: LabelVolume) -> bytes:
    """Serialize to a little-endian single-file NIfTI-1 (vox_offset 352)."""
    max_label = int(vol.voxels.max())
    datatype = DT_UINT8 if max_label <= 255 else DT_INT16
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    nx, ny, nz = vol.dims
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, _BITPIX[datatype])
    s = vol.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, s.dx, s.dy, s.dz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<h", hdr, 254, 1)  # sform_code: scanner
    m = vol.affine.matrix
    struct.pack_into("<4f", hdr, 280, *m[0])
    struct.pack_into("<4f", hdr, 296, *m[1])
    struct.pack_into("<4f", hdr, 312, *m[2])
    hdr[344:348] = b"n+1\0"

    payload = np.asfortranarray(vol.voxels.astype(dtype)).tobytes(order="F")
    return bytes(hdr) + b"\0" * (VOX_OFFSET - HEADER_SIZE) + payload
