"""3D Canny edge detection used to pick the voxels that vote."""

from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage

from ..volume import Volume


class EmptyEdgeSetError(RuntimeError):
    """No voxel survived edge detection; the volume cannot be localised."""


# one representative per +-pair of the 26 neighbour offsets
_DIRECTIONS = np.array(
    [d for d in itertools.product((-1, 0, 1), repeat=3) if d > (0, 0, 0)], dtype=np.intp
)


def _shifted(a: np.ndarray, d) -> np.ndarray:
    """``out[p] = a[p + d]`` with zero fill outside the volume."""
    out = np.zeros_like(a)
    src, dst = [], []
    for n, s in zip(a.shape, d):
        src.append(slice(max(s, 0), n + min(s, 0)))
        dst.append(slice(max(-s, 0), n + min(-s, 0)))
    out[tuple(dst)] = a[tuple(src)]
    return out


def gradient_magnitude(v: Volume, sigma: float = 1.5):
    """Gaussian-smoothed central-difference gradient (voxel units)."""
    sm = ndimage.gaussian_filter(v.data, [sigma / s for s in v.spacing], mode="nearest")
    g = np.stack(np.gradient(sm), axis=-1)
    return g, np.sqrt((g**2).sum(axis=-1))


def canny_edges(v: Volume, sigma: float = 1.5, low: float = 0.7, high: float = 0.9) -> np.ndarray:
    """Edge voxels as an ``(M, 3)`` int array of (i, j, k).

    ``low``/``high`` are quantiles of the gradient magnitude over all voxels.
    """
    if not 0 < low < high < 1:
        raise ValueError("need 0 < low < high < 1")
    g, mag = gradient_magnitude(v, sigma)

    # quantise the gradient to the best-aligned of the 13 neighbour axes
    unit = _DIRECTIONS / np.linalg.norm(_DIRECTIONS, axis=1, keepdims=True)
    direction = np.abs(g @ unit.T).argmax(axis=-1)
    keep = np.zeros(mag.shape, dtype=bool)
    for n, d in enumerate(_DIRECTIONS):
        sel = direction == n
        if not sel.any():
            continue
        ahead = _shifted(mag, d)
        behind = _shifted(mag, -d)
        # >= on one side, > on the other: plateaus of two keep exactly one voxel
        keep |= sel & (mag >= ahead) & (mag > behind)
    keep &= mag > 0

    lo_t, hi_t = np.quantile(mag, [low, high])
    weak = keep & (mag > lo_t)
    strong = weak & (mag >= hi_t)
    comp, n_comp = ndimage.label(weak, structure=np.ones((3, 3, 3)))
    if n_comp:
        seeded = np.zeros(n_comp + 1, dtype=bool)
        seeded[np.unique(comp[strong])] = True
        seeded[0] = False
        edges = seeded[comp]
    else:
        edges = weak
    coords = np.argwhere(edges)
    if coords.size == 0:
        raise EmptyEdgeSetError("edge detector found no significant voxels")
    return coords
