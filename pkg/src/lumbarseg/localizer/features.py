"""Contextual cuboid-mean features and plane-offset regression targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..volume import BoundingBox, Volume, integral_image


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    """``n`` random cuboid probes, each an (offset, half-size) pair in mm.

    ``probes`` has shape ``(n, 6)``: x/y/z offset then x/y/z half-size.
    """

    probes: np.ndarray
    seed: int
    offset_range: float
    size_range: tuple[float, float]

    @classmethod
    def generate(cls, n: int = 500, seed: int = 0, offset_range: float = 100.0,
                 size_range=(2.5, 25.0)) -> "FeatureSpec":
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(-offset_range, offset_range, size=(n, 3))
        halves = rng.uniform(size_range[0], size_range[1], size=(n, 3))
        probes = np.concatenate([offsets, halves], axis=1)
        probes.setflags(write=False)
        return cls(probes, int(seed), float(offset_range), tuple(map(float, size_range)))

    @property
    def n(self) -> int:
        return len(self.probes)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureSpec)
            and np.array_equal(self.probes, other.probes)
            and (self.seed, self.offset_range, self.size_range)
            == (other.seed, other.offset_range, other.size_range)
        )

    def in_voxels(self, spacing) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(spacing, dtype=np.float64)
        offsets = np.rint(self.probes[:, :3] / s).astype(np.intp)
        halves = np.rint(self.probes[:, 3:] / s).astype(np.intp)
        return offsets, halves

    def to_dict(self) -> dict:
        return {"probes": self.probes.tolist(), "seed": self.seed,
                "offset_range": self.offset_range, "size_range": list(self.size_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        probes = np.array(d["probes"], dtype=np.float64)
        probes.setflags(write=False)
        return cls(probes, int(d["seed"]), float(d["offset_range"]), tuple(d["size_range"]))


def extract_features(v: Volume, voxels, spec: FeatureSpec, chunk: int = 256) -> np.ndarray:
    """Feature matrix ``(len(voxels), spec.n)``; ``v`` should already be normalised."""
    voxels = np.asarray(voxels, dtype=np.intp).reshape(-1, 3)
    ii = integral_image(v)
    offsets, halves = spec.in_voxels(v.spacing)
    out = np.empty((len(voxels), spec.n))
    for start in range(0, len(voxels), chunk):
        c = voxels[start:start + chunk, None, :] + offsets[None]
        out[start:start + chunk] = ii.clamped_mean(c - halves, c + halves)
    return out


def make_targets(voxels, box: BoundingBox) -> np.ndarray:
    """Signed offsets of each voxel from the six bounding planes.

    Rows are ``(i - x_min, i - x_max, j - y_min, j - y_max, k - z_min, k - z_max)``.
    """
    vx = np.asarray(voxels, dtype=np.float64)
    single = vx.ndim == 1
    vx = vx.reshape(-1, 3)
    planes = np.asarray(box.as_tuple(), dtype=np.float64)
    out = np.repeat(vx, 2, axis=1) - planes
    return out[0] if single else out


def invert_targets(offsets, voxels) -> np.ndarray:
    """Absolute plane positions implied by predicted offsets at ``voxels``."""
    vx = np.asarray(voxels, dtype=np.float64).reshape(-1, 3)
    off = np.asarray(offsets, dtype=np.float64).reshape(-1, 6)
    return np.repeat(vx, 2, axis=1) - off
