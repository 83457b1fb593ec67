"""Slice augmentation: ROI height jitter plus rigid and elastic warps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    delta_set: tuple[int, ...] = (5, 10, 15, 20, 25)
    elastic_spacing_mm: float = 32.0
    elastic_sigma_mm: float = 4.0
    max_rotation_deg: float = 10.0
    max_translation: float = 10.0

    def __post_init__(self):
        if not self.delta_set or min(self.delta_set) <= 0:
            raise ValueError("deltas must be positive")


def roi_augment(image, labels, cfg: AugmentConfig, rng, delta=None, top=None):
    """Crop ``h - 2*delta`` consecutive rows starting at a random offset in ``[0, 2*delta]``.

    Simulates a localised box that is too tight along the slice height.
    """
    h = image.shape[0]
    if h <= 2 * max(cfg.delta_set):
        raise ValueError(f"slice height {h} too small for deltas {cfg.delta_set}")
    if delta is None:
        delta = int(rng.choice(cfg.delta_set))
    if top is None:
        top = int(rng.integers(0, 2 * delta + 1))
    if not 0 <= top <= 2 * delta:
        raise ValueError("top offset outside [0, 2*delta]")
    rows = slice(top, top + h - 2 * delta)
    return image[rows].copy(), labels[rows].copy()


def elastic_field(shape, rng, spacing_px: float, sigma_px: float) -> np.ndarray:
    """Smooth displacement field ``(2, H, W)`` from a coarse Gaussian grid, bilinearly upsampled."""
    h, w = shape
    gh, gw = int(np.ceil(h / spacing_px)) + 1, int(np.ceil(w / spacing_px)) + 1
    coarse = rng.normal(0.0, sigma_px, size=(2, gh, gw))
    rr, cc = np.meshgrid(np.arange(h) / spacing_px, np.arange(w) / spacing_px, indexing="ij")
    return np.stack([ndimage.map_coordinates(c, [rr, cc], order=1, mode="nearest") for c in coarse])


def warp_slice(image, labels, angle_deg=0.0, translation=(0.0, 0.0), displacement=None):
    """Rotate about the centre, translate by ``(rows, cols)`` and displace.

    Output pixel ``p`` samples the input at ``R(p - c) + c - t + d(p)``; the
    image is bilinear, labels nearest-neighbour, both zero outside.
    """
    h, w = image.shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cr, ccn = (h - 1) / 2.0, (w - 1) / 2.0
    a = np.deg2rad(angle_deg)
    cos, sin = np.cos(a), np.sin(a)
    dr, dc = rr - cr, cc - ccn
    src_r = cos * dr - sin * dc + cr - translation[0]
    src_c = sin * dr + cos * dc + ccn - translation[1]
    if displacement is not None:
        src_r = src_r + displacement[0]
        src_c = src_c + displacement[1]
    coords = [src_r, src_c]
    img = ndimage.map_coordinates(image, coords, order=1, mode="constant", cval=0.0)
    lab = ndimage.map_coordinates(labels, coords, order=0, mode="constant", cval=0)
    return img, lab.astype(labels.dtype)


def geo_augment(image, labels, cfg: AugmentConfig, rng, pixel_mm: float = 1.0):
    """Random rigid (rotation, translation) plus elastic warp of an image/label pair."""
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    shift = rng.uniform(-cfg.max_translation, cfg.max_translation, size=2)
    disp = None
    if cfg.elastic_sigma_mm > 0:
        disp = elastic_field(image.shape, rng, cfg.elastic_spacing_mm / pixel_mm,
                             cfg.elastic_sigma_mm / pixel_mm)
    return warp_slice(image, labels, angle, shift, disp)
