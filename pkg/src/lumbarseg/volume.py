"""3D scalar/label volumes, MetaImage I/O, resampling, slicing and integral images.

Volumes are stored as numpy arrays indexed ``[x, y, z]``.  On disk (and in the
flat view returned by :meth:`Volume.flat`) the data is x-fastest, which is the
C-order of the ``(z, y, x)`` transpose.

Axis convention: x = left-right (sagittal index), y = anterior-posterior
(coronal index), z = inferior-superior (axial index).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SAGITTAL, CORONAL, AXIAL = "sagittal", "coronal", "axial"
_AXIS_INDEX = {SAGITTAL: 0, CORONAL: 1, AXIAL: 2}

N_CLASSES = 6  # background + L1..L5

MET_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
    "MET_UCHAR": np.dtype("u1"),
}


class VolumeFormatError(ValueError):
    """Raised for malformed or inconsistent MHD/RAW files."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive voxel bounds on each axis."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int
    z_min: int
    z_max: int

    def __post_init__(self):
        for name in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x_min > self.x_max or self.y_min > self.y_max or self.z_min > self.z_max:
            raise ValueError(f"inverted bounding box {self.as_tuple()}")

    @classmethod
    def from_tuple(cls, t) -> "BoundingBox":
        return cls(*[int(v) for v in t])

    def as_tuple(self) -> tuple[int, int, int, int, int, int]:
        return (self.x_min, self.x_max, self.y_min, self.y_max, self.z_min, self.z_max)

    @property
    def lows(self) -> tuple[int, int, int]:
        return (self.x_min, self.y_min, self.z_min)

    @property
    def highs(self) -> tuple[int, int, int]:
        return (self.x_max, self.y_max, self.z_max)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - lo + 1 for lo, h in zip(self.lows, self.highs))

    def clamp(self, dims) -> "BoundingBox":
        """Clamp to ``[0, dim-1]``; raises if nothing of the box is left."""
        lo = [max(0, v) for v in self.lows]
        hi = [min(d - 1, v) for d, v in zip(dims, self.highs)]
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box {self.as_tuple()} does not intersect volume {tuple(dims)}")
        return BoundingBox(lo[0], hi[0], lo[1], hi[1], lo[2], hi[2])

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(lo, hi + 1) for lo, hi in zip(self.lows, self.highs))

    def contains(self, other: "BoundingBox") -> bool:
        return all(a <= b for a, b in zip(self.lows, other.lows)) and all(
            a >= b for a, b in zip(self.highs, other.highs)
        )


def _check_geometry(data: np.ndarray, spacing) -> tuple[float, float, float]:
    if data.ndim != 3 or min(data.shape) < 1:
        raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or min(spacing) <= 0:
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """Scalar image on a regular grid; ``data[i, j, k]`` is voxel (x=i, y=j, z=k)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        object.__setattr__(self, "spacing", _check_geometry(data, self.spacing))
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite intensities")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        """Data as a flat x-fastest array."""
        return self.data.transpose(2, 1, 0).ravel()

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        nx, ny, nz = dims
        arr = np.asarray(flat).reshape(nz, ny, nx).transpose(2, 1, 0)
        return cls(arr, spacing)

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing)


@dataclass(frozen=True)
class LabelVolume:
    """Label image with values in 0..5 (0 = background, k = L_k)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f" and not np.all(raw == np.round(raw)):
            raise ValueError("labels must be integers")
        data = np.array(raw, dtype=np.uint8)
        object.__setattr__(self, "spacing", _check_geometry(data, self.spacing))
        if raw.size and (raw.min() < 0 or raw.max() >= N_CLASSES):
            raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def flat(self) -> np.ndarray:
        return self.data.transpose(2, 1, 0).ravel()

    def with_data(self, data) -> "LabelVolume":
        return LabelVolume(data, self.spacing)


# --------------------------------------------------------------------------- I/O


def _parse_header(path: str) -> dict[str, str]:
    header = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise VolumeFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
    return header


def read_mhd(path: str) -> tuple[np.ndarray, tuple[float, float, float], str]:
    """Read an MHD/RAW pair; returns (array indexed [x,y,z], spacing, element type)."""
    header = _parse_header(path)
    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in header:
            raise VolumeFormatError(f"{path}: missing header key {key}")
    try:
        ndims = int(header["NDims"])
        dims = [int(v) for v in header["DimSize"].split()]
        spacing = [float(v) for v in header.get("ElementSpacing", "1 1 1").split()]
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: bad numeric header field: {exc}") from None
    if ndims != 3 or len(dims) != 3 or len(spacing) != 3:
        raise VolumeFormatError(f"{path}: only 3D volumes are supported")
    etype = header["ElementType"]
    if etype not in MET_TYPES:
        raise VolumeFormatError(f"{path}: unsupported element type {etype}")
    if header.get("ElementByteOrderMSB", "False").lower() == "true":
        raise VolumeFormatError(f"{path}: big-endian data is not supported")
    dtype = MET_TYPES[etype]
    raw_path = os.path.join(os.path.dirname(path), header["ElementDataFile"])
    with open(raw_path, "rb") as fh:
        payload = fh.read()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{raw_path}: holds {len(payload)} bytes, header declares {expected}"
        )
    nx, ny, nz = dims
    arr = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx).transpose(2, 1, 0)
    return arr, tuple(spacing), etype


def write_mhd(path: str, data: np.ndarray, spacing, element_type: str) -> None:
    if element_type not in MET_TYPES:
        raise VolumeFormatError(f"unsupported element type {element_type}")
    dtype = MET_TYPES[element_type]
    base = os.path.splitext(os.path.basename(path))[0]
    raw_name = base + ".raw"
    nx, ny, nz = data.shape
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        f"DimSize = {nx} {ny} {nz}",
        "ElementSpacing = " + " ".join(repr(float(s)) for s in spacing),
        f"ElementType = {element_type}",
        "ElementByteOrderMSB = False",
        f"ElementDataFile = {raw_name}",
    ]
    payload = np.ascontiguousarray(data.transpose(2, 1, 0)).astype(dtype).tobytes()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(os.path.dirname(path), raw_name), "wb") as fh:
        fh.write(payload)


def load_volume(path: str) -> Volume:
    arr, spacing, _ = read_mhd(path)
    return Volume(arr, spacing)


def load_labels(path: str) -> LabelVolume:
    arr, spacing, _ = read_mhd(path)
    return LabelVolume(arr, spacing)


def save_volume(v: Volume | LabelVolume, path: str, element_type: str | None = None) -> None:
    if element_type is None:
        element_type = "MET_UCHAR" if isinstance(v, LabelVolume) else "MET_DOUBLE"
    write_mhd(path, v.data, v.spacing, element_type)


# -------------------------------------------------------------------- geometry


def normalize(v: Volume, lo: float = 0.0, hi: float = 1000.0) -> Volume:
    """Clamp intensities to ``[lo, hi]`` and map affinely onto ``[0, 1]``."""
    if hi <= lo:
        raise ValueError("window must satisfy hi > lo")
    return v.with_data((np.clip(v.data, lo, hi) - lo) / (hi - lo))


def resample_isotropic(v: Volume, target: float) -> Volume:
    """Trilinear resampling to isotropic ``target`` mm voxels.

    Output voxel ``i`` samples the input at physical position ``i * target``
    (voxel centres, origin at voxel 0); positions past the last input voxel
    take the edge value.
    """
    if target <= 0:
        raise ValueError("target spacing must be positive")
    new_dims = [max(1, int(round(n * s / target))) for n, s in zip(v.dims, v.spacing)]
    if tuple(new_dims) == v.dims and all(s == target for s in v.spacing):
        return Volume(v.data.copy(), v.spacing)
    axes = [np.arange(n) * target / s for n, s in zip(new_dims, v.spacing)]
    coords = np.meshgrid(*axes, indexing="ij")
    out = ndimage.map_coordinates(v.data, coords, order=1, mode="nearest")
    return Volume(out, (target, target, target))


def crop(v, b: BoundingBox):
    """Sub-volume spanning the (clamped) inclusive box; same type as ``v``."""
    b = b.clamp(v.dims)
    return v.with_data(v.data[b.slices()].copy())


def extract_slice(v, axis: str, index: int) -> np.ndarray:
    """2D copy of one slice.

    Rows run along z for sagittal and coronal slices (so a sagittal slice is
    ``nz x ny``), along y for axial slices (``ny x nx``).
    """
    ax = _AXIS_INDEX[axis]
    n = v.dims[ax]
    if not 0 <= index < n:
        raise IndexError(f"{axis} index {index} outside [0, {n})")
    return np.take(v.data, index, axis=ax).T.copy()


def stack_slices(slices, axis: str, spacing=(1.0, 1.0, 1.0), labels: bool = False):
    """Inverse of :func:`extract_slice` applied to every index along ``axis``."""
    arr = np.stack([np.asarray(s).T for s in slices], axis=_AXIS_INDEX[axis])
    return LabelVolume(arr, spacing) if labels else Volume(arr, spacing)


# -------------------------------------------------------------- integral image


@dataclass(frozen=True)
class IntegralVolume:
    """Zero-padded 3D cumulative sums: ``table[i, j, k]`` = sum of data[:i, :j, :k]."""

    table: np.ndarray
    dims: tuple[int, int, int] = field(default=(0, 0, 0))

    def cuboid_sum(self, lo, hi) -> np.ndarray:
        """Sum over inclusive cuboids ``lo..hi``; arrays of shape (..., 3), assumed in-bounds."""
        lo = np.asarray(lo, dtype=np.intp)
        hi = np.asarray(hi, dtype=np.intp) + 1
        t = self.table
        x0, y0, z0 = lo[..., 0], lo[..., 1], lo[..., 2]
        x1, y1, z1 = hi[..., 0], hi[..., 1], hi[..., 2]
        return (
            t[x1, y1, z1]
            - t[x0, y1, z1]
            - t[x1, y0, z1]
            - t[x1, y1, z0]
            + t[x0, y0, z1]
            + t[x0, y1, z0]
            + t[x1, y0, z0]
            - t[x0, y0, z0]
        )

    def clamped_mean(self, lo, hi) -> np.ndarray:
        """Mean over cuboids after clamping to the volume; empty intersections give 0."""
        dims = np.asarray(self.dims)
        lo = np.maximum(np.asarray(lo, dtype=np.intp), 0)
        hi = np.minimum(np.asarray(hi, dtype=np.intp), dims - 1)
        empty = np.any(hi < lo, axis=-1)
        lo = np.where(empty[..., None], 0, lo)
        hi = np.where(empty[..., None], 0, hi)
        counts = np.prod(hi - lo + 1, axis=-1)
        out = self.cuboid_sum(lo, hi) / counts
        return np.where(empty, 0.0, out)


def integral_image(v: Volume) -> IntegralVolume:
    table = np.zeros(tuple(n + 1 for n in v.dims))
    table[1:, 1:, 1:] = v.data.cumsum(0).cumsum(1).cumsum(2)
    table.setflags(write=False)
    return IntegralVolume(table, v.dims)


def cuboid_mean(ii: IntegralVolume, center, offset, halfsize) -> float:
    """Mean of the cuboid centred at ``center + offset`` with extents ``+-halfsize`` voxels."""
    c = np.asarray(center, dtype=np.intp) + np.asarray(offset, dtype=np.intp)
    h = np.asarray(halfsize, dtype=np.intp)
    return float(ii.clamped_mean(c - h, c + h))
