"""Synthetic lumbar-spine phantoms with ground-truth labels and boxes.

Each vertebra is a union of ellipsoids (body, arch, spinous and transverse
processes) placed along a possibly curved spine axis.  Labels 1..5 are L1..L5
with L1 the most superior; the thoracic vertebra above (with rib stubs) and the
sacral segments below are rendered at bone intensity but labelled background.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .localizer.voting import expand_box
from .volume import BoundingBox, LabelVolume, Volume, load_labels, load_volume, save_volume

GT_MARGIN = 15


@dataclass(frozen=True)
class PhantomConfig:
    seed: int = 0
    dims: tuple[int, int, int] = (96, 96, 160)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    pitch_mm: float = 20.0
    body_radii_mm: tuple[float, float, float] = (14.0, 11.0, 7.2)
    size_gradient: float = 0.06
    size_jitter: float = 0.05
    thoracic_extras: int = 1
    sacral_extras: int = 1
    extra_sacrum: bool = False
    curvature_mm: float = 0.0
    fracture_prob: float = 0.0
    crush_factor: float = 0.6
    noise_sigma: float = 20.0
    bone_intensity: float = 900.0
    tissue_intensity: float = 300.0
    air_intensity: float = 0.0
    position_jitter_mm: float = 6.0
    gt_margin: int = GT_MARGIN

    def __post_init__(self):
        if not 0.0 <= self.fracture_prob <= 1.0:
            raise ValueError("fracture_prob must lie in [0, 1]")
        if min(self.dims) < 1 or min(self.spacing) <= 0:
            raise ValueError("invalid grid")


TOY_PHANTOM = PhantomConfig(dims=(45, 42, 80), spacing=(2.5, 2.5, 2.5))


@dataclass
class _Part:
    center: np.ndarray
    radii: np.ndarray


@dataclass
class _Vertebra:
    name: str
    label: int
    parts: list = field(default_factory=list)


def _lumbar_parts(c, radii, crush):
    rx, ry, rz = radii
    body = _Part(c, np.array([rx, ry, rz * crush]))
    arch = _Part(c + [0, ry + 4.0, 0], np.array([0.55 * rx, 4.5, 0.6 * rz]))
    spinous = _Part(c + [0, ry + 13.0, -0.2 * rz], np.array([2.5, 8.0, 0.5 * rz]))
    reach = 0.55 * rx + 6.0
    left = _Part(c + [-reach, ry + 4.0, 0], np.array([8.0, 3.0, 0.45 * rz]))
    right = _Part(c + [reach, ry + 4.0, 0], np.array([8.0, 3.0, 0.45 * rz]))
    return [body, arch, spinous, left, right]


def _thoracic_parts(c, radii):
    rx, ry, rz = radii
    parts = _lumbar_parts(c, radii, 1.0)[:3]
    for side in (-1, 1):  # rib stubs: long, thin, angled back
        parts.append(_Part(c + [side * (rx + 10.0), ry + 6.0, 0], np.array([14.0, 3.0, 2.5])))
    return parts


def _sacral_parts(c, radii, order):
    rx, ry, rz = radii
    shrink = 1.0 - 0.15 * order
    body = _Part(c, np.array([1.2 * rx * shrink, ry * shrink, rz]))
    wings = [
        _Part(c + [side * (rx + 6.0) * shrink, ry * 0.6, 0], np.array([11.0 * shrink, 7.0, 0.9 * rz]))
        for side in (-1, 1)
    ]
    crest = _Part(c + [0, ry + 6.0, 0], np.array([6.0 * shrink, 5.0, 0.8 * rz]))
    return [body, crest] + wings


def _paint(mask_vol, part, spacing, value):
    """Set ``mask_vol`` to ``value`` inside the ellipsoid (physical mm coords)."""
    sp = np.asarray(spacing)
    lo = np.floor((part.center - part.radii) / sp).astype(int)
    hi = np.ceil((part.center + part.radii) / sp).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, mask_vol.shape)
    if np.any(hi <= lo):
        return
    axes = [np.arange(lo[a], hi[a]) * sp[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    r = (
        ((gx - part.center[0]) / part.radii[0]) ** 2
        + ((gy - part.center[1]) / part.radii[1]) ** 2
        + ((gz - part.center[2]) / part.radii[2]) ** 2
    )
    region = mask_vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    region[r <= 1.0] = value


def _stack_extent(cfg: PhantomConfig):
    """z-extent (mm) of the lumbar stack around the L5 centre: (below, above)."""
    g = cfg.size_gradient
    rz5 = cfg.body_radii_mm[2] * (1 + 2 * g) * (1 + cfg.size_jitter)
    rz1 = cfg.body_radii_mm[2] * (1 - 2 * g) * (1 + cfg.size_jitter)
    return rz5, 4 * cfg.pitch_mm + rz1


def gen_phantom(cfg: PhantomConfig):
    """Render one phantom; returns ``(Volume, LabelVolume, ground-truth BoundingBox)``."""
    rng = np.random.default_rng(cfg.seed)
    sp = np.asarray(cfg.spacing, dtype=np.float64)
    size_mm = np.asarray(cfg.dims) * sp
    margin_mm = cfg.gt_margin * sp

    below, above = _stack_extent(cfg)
    z_lo = below + margin_mm[2]
    z_hi = size_mm[2] - sp[2] - above - margin_mm[2]
    if z_hi < z_lo:
        raise ValueError(f"lumbar stack plus {cfg.gt_margin}-voxel margin does not fit dims {cfg.dims}")
    n_sacral = 3 if cfg.extra_sacrum else cfg.sacral_extras
    if cfg.extra_sacrum:
        # push the stack up so the whole sacrum stays in the field of view
        z5 = z_hi - rng.uniform(0, 0.1) * (z_hi - z_lo)
    else:
        z5 = rng.uniform(z_lo, z_hi)

    cx = size_mm[0] / 2 + rng.uniform(-1, 1) * cfg.position_jitter_mm
    cy = size_mm[1] * 0.42 + rng.uniform(-1, 1) * cfg.position_jitter_mm
    curve_sign = rng.choice([-1.0, 1.0])
    curve_phase = rng.uniform(-0.3, 0.3)
    span = 4 * cfg.pitch_mm

    def axis_x(z):
        t = (z - z5) / span
        return cx + curve_sign * cfg.curvature_mm * np.sin(np.pi * (t + curve_phase))

    base = np.asarray(cfg.body_radii_mm, dtype=np.float64)
    verts = []
    for k in range(1, 6):  # L1..L5
        z = z5 + (5 - k) * cfg.pitch_mm
        scale = (1 + cfg.size_gradient * (k - 3)) * (1 + rng.uniform(-1, 1) * cfg.size_jitter)
        crush = cfg.crush_factor if rng.uniform() < cfg.fracture_prob else 1.0
        c = np.array([axis_x(z), cy, z])
        verts.append(_Vertebra(f"L{k}", k, _lumbar_parts(c, base * scale, crush)))
    for t in range(cfg.thoracic_extras):
        z = z5 + (5 + t) * cfg.pitch_mm
        scale = 1 - cfg.size_gradient * (3 + t)
        c = np.array([axis_x(z), cy, z])
        verts.append(_Vertebra(f"T{12 - t}", 0, _thoracic_parts(c, base * scale)))
    for s in range(1, n_sacral + 1):
        z = z5 - s * cfg.pitch_mm
        c = np.array([axis_x(z), cy, z])
        verts.append(_Vertebra(f"S{s}", 0, _sacral_parts(c, base * (1 + 2 * cfg.size_gradient), s - 1)))

    labels = np.zeros(cfg.dims, dtype=np.uint8)
    bone = np.zeros(cfg.dims, dtype=bool)
    for v in verts:
        for part in v.parts:
            _paint(bone, part, sp, True)
            if v.label:
                _paint(labels, part, sp, v.label)
    # the lumbar label wins wherever an extra vertebra touches it
    bone |= labels > 0

    # soft-tissue body outline: elliptic cylinder along z
    gx = (np.arange(cfg.dims[0]) + 0.5) * sp[0] - size_mm[0] / 2
    gy = (np.arange(cfg.dims[1]) + 0.5) * sp[1] - size_mm[1] / 2
    body = (gx[:, None] / (0.47 * size_mm[0])) ** 2 + (gy[None, :] / (0.47 * size_mm[1])) ** 2 <= 1
    img = np.full(cfg.dims, cfg.air_intensity, dtype=np.float64)
    img[body] = cfg.tissue_intensity
    img[bone] = cfg.bone_intensity
    img = ndimage.gaussian_filter(img, 0.6, mode="nearest")
    img += rng.normal(0.0, cfg.noise_sigma, size=cfg.dims)

    lab = LabelVolume(labels, cfg.spacing)
    box = ground_truth_box(lab, cfg.gt_margin)
    return Volume(img, cfg.spacing), lab, box


def tight_box(labels: LabelVolume) -> BoundingBox:
    idx = np.argwhere(labels.data > 0)
    if idx.size == 0:
        raise ValueError("no labelled voxels")
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    return BoundingBox(lo[0], hi[0], lo[1], hi[1], lo[2], hi[2])


def ground_truth_box(labels: LabelVolume, margin: int = GT_MARGIN) -> BoundingBox:
    """First/last labelled slice per axis, grown by ``margin`` and clamped."""
    return expand_box(tight_box(labels), margin, labels.dims)


# ------------------------------------------------------------------ suites


@dataclass(frozen=True)
class Case:
    case_id: str
    split: str
    image_path: str
    label_path: str
    flags: tuple[str, ...] = ()

    def load(self):
        return load_volume(self.image_path), load_labels(self.label_path)


def suite_configs(n_train: int, n_test: int, base: PhantomConfig, seed: int,
                  fracture_frac: float = 0.4, scoliosis_frac: float = 0.3,
                  scoliosis_mm: float = 10.0):
    """Per-case (case_id, split, config, flags); the last test case carries the extra sacrum."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test case")
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    case_seeds = rng.integers(0, 2**31 - 1, size=n)
    fractured = set(rng.choice(n, int(round(fracture_frac * n)), replace=False).tolist())
    scoliotic = set(rng.choice(n, int(round(scoliosis_frac * n)), replace=False).tolist())
    out = []
    for i in range(n):
        split = "train" if i < n_train else "test"
        flags = []
        cfg = replace(base, seed=int(case_seeds[i]))
        if i in fractured:
            cfg = replace(cfg, fracture_prob=0.5)
            flags.append("fracture")
        if i in scoliotic:
            cfg = replace(cfg, curvature_mm=scoliosis_mm)
            flags.append("scoliosis")
        if i == n - 1:
            cfg = replace(cfg, extra_sacrum=True)
            flags.append("extra_sacrum")
        out.append((f"case{i + 1:03d}", split, cfg, tuple(flags)))
    return out


def gen_suite(n_train: int, n_test: int, base_cfg: PhantomConfig, seed: int, out_dir: str, **kw) -> str:
    """Write MHD images/labels plus ``manifest.txt``; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = ["# case_id, split, image_path, label_path, flags",
             "# labels: 0 background, 1..5 = L1..L5, z increases superiorly"]
    for case_id, split, cfg, flags in suite_configs(n_train, n_test, base_cfg, seed, **kw):
        vol, lab, _ = gen_phantom(cfg)
        img_name, lab_name = f"{case_id}_image.mhd", f"{case_id}_labels.mhd"
        save_volume(vol, os.path.join(out_dir, img_name), "MET_SHORT")
        save_volume(lab, os.path.join(out_dir, lab_name), "MET_UCHAR")
        lines.append(f"{case_id}, {split}, {img_name}, {lab_name}, {'|'.join(flags) or '-'}")
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_manifest(path: str) -> list[Case]:
    root = os.path.dirname(os.path.abspath(path))
    cases = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 5:
                raise ValueError(f"bad manifest line: {line!r}")
            cid, split, img, lab, flags = fields
            flags = () if flags == "-" else tuple(flags.split("|"))
            cases.append(Case(cid, split, os.path.join(root, img), os.path.join(root, lab), flags))
    return cases
