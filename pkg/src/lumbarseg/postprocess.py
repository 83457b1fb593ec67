"""Label clean-up: per-coronal-slice closing and largest-component filtering."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume import N_CLASSES, LabelVolume

CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=bool)


def disk(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def close_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing on an unbounded zero background (padding avoids border erosion)."""
    pad = radius + 1
    m = np.pad(mask, pad)
    se = disk(radius)
    out = ndimage.binary_erosion(ndimage.binary_dilation(m, se), se)
    return out[pad:-pad, pad:-pad]


def coronal_close(l: LabelVolume, radius: int = 2) -> LabelVolume:
    """Close every label independently in each coronal (fixed-y) slice.

    Where closed labels overlap, the smaller label index wins.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    src = l.data
    out = np.zeros_like(src)
    for j in range(src.shape[1]):
        sl = src[:, j, :]
        present = [k for k in range(1, N_CLASSES) if np.any(sl == k)]
        res = np.zeros_like(sl)
        for k in reversed(present):  # smaller labels written last, so they win
            res[close_mask(sl == k, radius)] = k
        out[:, j, :] = res
    return l.with_data(out)


def largest_components(l: LabelVolume) -> LabelVolume:
    """Keep only the largest 26-connected component of every label.

    Ties go to the component whose first voxel comes first in array order.
    """
    src = l.data
    out = np.zeros_like(src)
    for k in range(1, N_CLASSES):
        mask = src == k
        if not mask.any():
            continue
        comp, n = ndimage.label(mask, structure=CONNECTIVITY_26)
        sizes = np.bincount(comp.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1  # argmax takes the first maximum
        out[comp == keep] = k
    return l.with_data(out)


def postprocess(l: LabelVolume, radius: int = 2) -> LabelVolume:
    return largest_components(coronal_close(l, radius))
