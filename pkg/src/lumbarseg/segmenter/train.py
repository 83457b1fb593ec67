"""Sagittal-slice training, crop inference and reinstatement."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .. import nn
from ..volume import SAGITTAL, BoundingBox, LabelVolume, Volume, extract_slice, normalize, stack_slices
from .augment import AugmentConfig, geo_augment, roi_augment
from .unet import SegModel, UNetConfig, build_unet, pad_to_multiple

log = logging.getLogger(__name__)

BINARY, MULTICLASS = "binary", "multiclass"


class TrainingDivergedError(RuntimeError):
    pass


class MissingInitError(ValueError):
    """Multiclass training was requested without a pretrained model or the scratch flag."""


@dataclass
class SegHyper:
    epochs: int = 2000
    lr: float = 1e-4
    batch_size: int = 8
    slices_per_crop: int | None = None
    augment: bool = True
    seed: int = 0
    window: tuple[float, float] = (0.0, 1000.0)


def _prepare(crops, mode, window):
    out = []
    for vol, lab in crops:
        img = normalize(vol, *window).data
        labels = lab.data.astype(np.intp)
        if mode == BINARY:
            labels = (labels > 0).astype(np.intp)
        out.append((img, labels, float(vol.spacing[1])))
    return out


def _batches(prepared, hyper, rng):
    """Per epoch: (crop index, slice indices) groups, each from one crop, in shuffled order."""
    groups = []
    for ci, (img, _, _) in enumerate(prepared):
        nx = img.shape[0]
        idx = rng.permutation(nx)
        if hyper.slices_per_crop is not None:
            idx = idx[:hyper.slices_per_crop]
        for s in range(0, len(idx), hyper.batch_size):
            groups.append((ci, idx[s:s + hyper.batch_size]))
    order = rng.permutation(len(groups))
    return [groups[i] for i in order]


def _make_batch(prepared, ci, slices, aug, hyper, multiple, rng):
    img, labels, pixel_mm = prepared[ci]
    delta = None
    if hyper.augment:
        h = img.shape[2]
        fits = [d for d in aug.delta_set if h > 2 * d]
        delta = int(rng.choice(fits)) if len(fits) == len(aug.delta_set) else None
    xs, ys = [], []
    for i in slices:
        x, y = img[i].T, labels[i].T  # (z, y): rows run along z
        if hyper.augment:
            if delta is not None:
                x, y = roi_augment(x, y, aug, rng, delta=delta)
            x, y = geo_augment(x, y, aug, rng, pixel_mm)
        xs.append(pad_to_multiple(x, multiple))
        ys.append(pad_to_multiple(y, multiple))
    return np.stack(xs)[..., None], np.stack(ys)


def train_segmenter(crops, cfg: UNetConfig, aug: AugmentConfig | None = None, mode: str = MULTICLASS,
                    init: SegModel | None = None, scratch: bool = False,
                    hyper: SegHyper | None = None, callback=None) -> SegModel:
    """Train on sagittal slices of ``[(Volume crop, LabelVolume crop), ...]`` with Adam + cross-entropy.

    ``callback(epoch, loss, model)`` is invoked after every epoch. The
    returned model carries the per-epoch mean loss in ``losses``.
    """
    aug = aug or AugmentConfig()
    hyper = hyper or SegHyper()
    if not crops:
        raise ValueError("no training crops")
    if mode not in (BINARY, MULTICLASS):
        raise ValueError(f"unknown mode {mode!r}")
    n_classes = 2 if mode == BINARY else 6
    if init is None:
        if mode == MULTICLASS and not scratch:
            raise MissingInitError("multiclass training needs a transferred model or scratch=True")
        model = build_unet(UNetConfig(cfg.levels, cfg.base_channels, cfg.in_channels, n_classes,
                                      cfg.max_channels), seed=hyper.seed, window=hyper.window)
    else:
        if init.config.out_classes != n_classes:
            raise ValueError(f"init model has {init.config.out_classes} classes, mode needs {n_classes}")
        model = SegModel(init.config, init.net.copy(), init.provenance, init.window)
    rng = np.random.default_rng(hyper.seed)
    prepared = _prepare(crops, mode, model.window)
    multiple = model.config.pad_multiple
    net = model.net
    params = net.parameters()
    opt = nn.Adam(params, lr=hyper.lr)
    for epoch in range(hyper.epochs):
        total, count = 0.0, 0
        for ci, slices in _batches(prepared, hyper, rng):
            x, y = _make_batch(prepared, ci, slices, aug, hyper, multiple, rng)
            out, cache = net.forward(x)
            loss, grad = nn.loss_softmax_ce(out, y, n_classes)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            grads, _ = net.backward(cache, grad)
            opt.step(params, grads)
            total += loss * len(slices)
            count += len(slices)
        model.losses.append(total / count)
        if callback is not None:
            callback(epoch, model.losses[-1], model)
        if epoch % 25 == 0 or epoch == hyper.epochs - 1:
            log.info("%s epoch %d loss %.5f", mode, epoch, model.losses[-1])
    net.meta.update({"epochs": len(model.losses), "mode": mode, "hyper": asdict(hyper)})
    return model


def predict_logits(model: SegModel, images, batch: int = 8) -> np.ndarray:
    """Logits for a stack of 2D images ``(N, H, W)`` (mirror-padded internally)."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    padded = np.stack([pad_to_multiple(im, model.config.pad_multiple) for im in images])
    outs = [model.net(padded[s:s + batch, ..., None]) for s in range(0, n, batch)]
    return np.concatenate(outs)[:, :h, :w]


def segment_crop(model: SegModel, crop: Volume, batch: int = 8) -> LabelVolume:
    """Label every sagittal slice of a (raw-intensity) crop by per-pixel argmax."""
    vol = normalize(crop, *model.window)
    slices = np.stack([extract_slice(vol, SAGITTAL, i) for i in range(vol.dims[0])])
    labels = predict_logits(model, slices, batch).argmax(axis=-1)
    return stack_slices(list(labels), SAGITTAL, crop.spacing, labels=True)


def reinstate(label_crop: LabelVolume, b: BoundingBox, full_dims) -> LabelVolume:
    """Embed a crop-sized labelling at box ``b`` of an otherwise background volume."""
    if tuple(label_crop.dims) != tuple(b.shape):
        raise ValueError(f"crop dims {label_crop.dims} do not match box extents {b.shape}")
    if b.clamp(full_dims) != b:
        raise ValueError("box exceeds the full volume")
    full = np.zeros(tuple(full_dims), dtype=np.uint8)
    full[b.slices()] = label_crop.data
    return LabelVolume(full, label_crop.spacing)


def save_segmenter(model: SegModel, path: str) -> None:
    net = model.net.copy()
    net.meta.update({"unet": asdict(model.config), "provenance": model.provenance,
                     "window": list(model.window), "losses": list(model.losses)})
    nn.save_checkpoint(net, path)


def load_segmenter(path: str) -> SegModel:
    net = nn.load_checkpoint(path)
    if "unet" not in net.meta:
        raise nn.CheckpointError(f"{path} is not a segmenter checkpoint")
    cfg = UNetConfig(**net.meta["unet"])
    return SegModel(cfg, net, net.meta.get("provenance", "scratch"),
                    tuple(net.meta.get("window", (0.0, 1000.0))), list(net.meta.get("losses", [])))
