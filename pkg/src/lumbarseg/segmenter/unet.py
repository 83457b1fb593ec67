"""U-Net construction, receptive-field analysis and binary-to-multiclass transfer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import nn


@dataclass(frozen=True)
class UNetConfig:
    """Encoder/decoder depth and widths; channels double per level up to ``max_channels``."""

    levels: int = 5
    base_channels: int = 32
    in_channels: int = 1
    out_classes: int = 6
    max_channels: int = 512

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1 or self.in_channels < 1:
            raise ValueError("levels, base_channels and in_channels must be positive")
        if self.out_classes < 2:
            raise ValueError("need at least two output classes")

    @property
    def pad_multiple(self) -> int:
        return 2**self.levels

    def channels(self, level: int) -> int:
        return min(self.base_channels * 2**level, self.max_channels)


TOY_UNET = UNetConfig(levels=3, base_channels=8)


@dataclass
class SegModel:
    config: UNetConfig
    net: nn.Model
    provenance: str = "scratch"
    window: tuple[float, float] = (0.0, 1000.0)
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.net.n_out != self.config.out_classes:
            raise nn.ShapeError("classifier width does not match out_classes")

    @property
    def classifier_index(self) -> int:
        return len(self.net.specs) - 1


def unet_specs(cfg: UNetConfig) -> list[nn.LayerSpec]:
    """Layer list: ``levels`` encoder blocks, bottleneck, ``levels`` decoder blocks, 1x1 classifier."""
    specs: list[nn.LayerSpec] = []
    skips = []
    width = cfg.in_channels
    for level in range(cfg.levels):
        c = cfg.channels(level)
        specs += [nn.conv2d(width, c), nn.relu(), nn.conv2d(c, c), nn.relu()]
        skips.append(len(specs) - 1)
        specs.append(nn.maxpool2())
        width = c
    c = cfg.channels(cfg.levels)
    specs += [nn.conv2d(width, c), nn.relu(), nn.conv2d(c, c), nn.relu()]
    width = c
    for level in reversed(range(cfg.levels)):
        c = cfg.channels(level)
        specs += [nn.upconv2(width, c), nn.concat(skips[level]),
                  nn.conv2d(2 * c, c), nn.relu(), nn.conv2d(c, c), nn.relu()]
        width = c
    specs.append(nn.conv2d(width, cfg.out_classes, k=1))
    return specs


def build_unet(cfg: UNetConfig, seed: int = 0, window=(0.0, 1000.0)) -> SegModel:
    net = nn.Model(unet_specs(cfg), seed=seed, meta={"unet": asdict(cfg), "kind": "segmenter"})
    return SegModel(cfg, net, "scratch", tuple(window))


def receptive_field(cfg: UNetConfig, kernel: int = 3) -> int:
    """Receptive field (pixels) of one bottleneck activation."""
    rf, jump = 1, 1
    for _ in range(cfg.levels):
        rf += 2 * (kernel - 1) * jump  # two convs
        rf += (2 - 1) * jump  # 2x2 pool
        jump *= 2
    rf += 2 * (kernel - 1) * jump  # bottleneck convs
    return rf


def transfer_weights(binary: SegModel, target_classes: int = 6, seed: int = 0) -> SegModel:
    """Copy every tensor of a 2-class model; re-initialise the classifier at ``target_classes``."""
    if binary.config.out_classes != 2:
        raise ValueError("source model must be a binary (2-class) segmenter")
    cfg = UNetConfig(binary.config.levels, binary.config.base_channels,
                     binary.config.in_channels, target_classes, binary.config.max_channels)
    specs = unet_specs(cfg)
    if specs[:-1] != binary.net.specs[:-1]:
        raise ValueError("configuration mismatch between source and target")
    rng = np.random.default_rng(seed)
    params = [[t.copy() for t in p] for p in binary.net.params[:-1]]
    params.append(nn.layers.init_params(specs[-1], rng))
    meta = dict(binary.net.meta, unet=asdict(cfg), transfer_seed=seed)
    net = nn.Model(specs, params, meta=meta)
    return SegModel(cfg, net, "pretrained-binary", binary.window)


def pad_to_multiple(img: np.ndarray, multiple: int, mode: str = "symmetric") -> np.ndarray:
    """Mirror-pad the first two axes (bottom/right) up to a multiple of ``multiple``."""
    h, w = img.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if not ph and not pw:
        return img
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode=mode)
