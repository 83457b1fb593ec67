"""Vote sets, their aggregation into a box, and box-level metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..volume import BoundingBox, LabelVolume
from .kde import botev_bandwidth, kde_mode

PLANES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")


@dataclass(frozen=True)
class VoteSet:
    """Absolute plane votes, one row per plane: ``planes[p, r]`` is voter r's vote for plane p."""

    planes: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.planes, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 6:
            raise ValueError(f"vote array must be (6, M), got {arr.shape}")
        object.__setattr__(self, "planes", arr)

    def __len__(self):
        return self.planes.shape[1]

    def shifted(self, t) -> "VoteSet":
        t = np.repeat(np.broadcast_to(np.asarray(t, dtype=np.float64), (3,)), 2)
        return VoteSet(self.planes + t[:, None])

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["plane", "value"])
            for name, row in zip(PLANES, self.planes):
                for value in row:
                    w.writerow([name, f"{value:.6f}"])


def representative_plane(votes, is_min: bool) -> int:
    """Most representative value of one plane's votes, rounded to a voxel index."""
    v = np.asarray(votes, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no votes")
    if v.min() == v.max():
        mode = float(v[0])
    elif v.size < 16:
        mode = float(np.median(v))
    else:
        mode = kde_mode(v, botev_bandwidth(v))
    # nearest integer; exact halves round outward (box grows)
    return math.ceil(mode - 0.5) if is_min else math.floor(mode + 0.5)


def aggregate_votes(votes: VoteSet, dims=None) -> BoundingBox:
    """Per-plane KDE mode of the votes; optionally clamped to ``dims``."""
    if len(votes) == 0:
        raise ValueError("empty vote set")
    vals = [representative_plane(row, p % 2 == 0) for p, row in enumerate(votes.planes)]
    for a in range(3):
        lo, hi = vals[2 * a], vals[2 * a + 1]
        if lo > hi:
            vals[2 * a], vals[2 * a + 1] = hi, lo
    box = BoundingBox(*vals)
    return box if dims is None else clamp_box(box, dims)


def clamp_box(box: BoundingBox, dims) -> BoundingBox:
    """Clamp every plane into ``[0, dim-1]`` (never fails, unlike :meth:`BoundingBox.clamp`)."""
    vals = list(box.as_tuple())
    for p in range(6):
        vals[p] = int(min(max(vals[p], 0), dims[p // 2] - 1))
    return BoundingBox(*vals)


def expand_box(b: BoundingBox, tol: int, dims) -> BoundingBox:
    """Grow every side by ``tol`` voxels, clamped to the volume."""
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    grown = BoundingBox(b.x_min - tol, b.x_max + tol, b.y_min - tol, b.y_max + tol,
                        b.z_min - tol, b.z_max + tol)
    return clamp_box(grown, dims)


def sensitivity(gt: LabelVolume, b: BoundingBox) -> float:
    """Fraction of labelled ground-truth voxels that fall inside ``b``."""
    fg = gt.data > 0
    total = int(fg.sum())
    if total == 0:
        raise ValueError("ground truth has no labelled voxels")
    lo = [max(0, v) for v in b.lows]
    hi = [min(n - 1, v) for n, v in zip(gt.dims, b.highs)]
    if any(a > c for a, c in zip(lo, hi)):
        return 0.0
    inside = int(fg[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].sum())
    return inside / total
