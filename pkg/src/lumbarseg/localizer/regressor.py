"""MLP plane-offset regressor: training, vote prediction and checkpoints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..volume import BoundingBox, Volume, normalize
from .canny import canny_edges
from .features import FeatureSpec, extract_features, invert_targets, make_targets
from .voting import VoteSet, aggregate_votes, clamp_box, expand_box

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class LocalizerHyper:
    hidden: tuple[int, ...] = (350, 250, 150, 50)
    epochs: int = 1000
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    samples_per_volume: int = 2000
    pool_per_volume: int = 4000
    n_augment: int = 2
    max_shift_mm: float = 10.0
    target_scale: float = 1.0
    canny_sigma: float = 1.5
    canny_low: float = 0.7
    canny_high: float = 0.9
    window: tuple[float, float] = (0.0, 1000.0)
    seed: int = 0


@dataclass
class LocalizerModel:
    net: nn.Model
    spec: FeatureSpec
    window: tuple[float, float] = (0.0, 1000.0)
    target_scale: float = 1.0
    canny: tuple[float, float, float] = (1.5, 0.7, 0.9)
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.net.n_in != self.spec.n or self.net.n_out != 6:
            raise nn.ShapeError(
                f"regressor must map {self.spec.n} features to 6 offsets, "
                f"got {self.net.n_in}->{self.net.n_out}"
            )

    def predict_offsets(self, features, batch: int = 1024) -> np.ndarray:
        out = [self.net(features[s:s + batch]) for s in range(0, len(features), batch)]
        return np.concatenate(out) * self.target_scale


def regressor_specs(n_features: int, hidden=(350, 250, 150, 50)) -> list[nn.LayerSpec]:
    """ReLU MLP ``n -> hidden... -> 6`` with a linear output layer."""
    specs, width = [], n_features
    for h in hidden:
        specs += [nn.dense(width, h), nn.relu()]
        width = h
    specs.append(nn.dense(width, 6))
    return specs


def shift_case(v: Volume, box: BoundingBox, shift) -> tuple[Volume, BoundingBox]:
    """Rigid integer translation; vacated voxels replicate the nearest edge."""
    data = v.data
    for axis, s in enumerate(shift):
        if s == 0:
            continue
        n = data.shape[axis]
        idx = np.clip(np.arange(n) - s, 0, n - 1)
        data = np.take(data, idx, axis=axis)
    moved = BoundingBox(box.x_min + shift[0], box.x_max + shift[0], box.y_min + shift[1],
                        box.y_max + shift[1], box.z_min + shift[2], box.z_max + shift[2])
    return v.with_data(data), clamp_box(moved, v.dims)


def _training_pool(v, box, spec, hyper, rng):
    edges = canny_edges(v, hyper.canny_sigma, hyper.canny_low, hyper.canny_high)
    if len(edges) > hyper.pool_per_volume:
        edges = edges[np.sort(rng.choice(len(edges), hyper.pool_per_volume, replace=False))]
    return extract_features(v, edges, spec), make_targets(edges, box) / hyper.target_scale


def fit_regressor(net: nn.Model, pools, hyper: LocalizerHyper, rng) -> list[float]:
    """SGD-momentum on MSE over per-volume (features, targets) pools; returns the loss trace."""
    opt = nn.SGDMomentum(net.parameters(), lr=hyper.lr, momentum=hyper.momentum)
    params = net.parameters()
    losses = []
    for epoch in range(hyper.epochs):
        xs, ys = [], []
        for feats, targets in pools:
            k = min(hyper.samples_per_volume, len(feats))
            pick = rng.choice(len(feats), k, replace=False)
            xs.append(feats[pick])
            ys.append(targets[pick])
        x, y = np.concatenate(xs), np.concatenate(ys)
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), hyper.batch_size):
            b = order[s:s + hyper.batch_size]
            out, cache = net.forward(x[b])
            loss, grad = nn.loss_mse(out, y[b])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            grads, _ = net.backward(cache, grad)
            opt.step(params, grads)
            total += loss * len(b)
        losses.append(total / len(x) * hyper.target_scale**2)
        if epoch % 50 == 0 or epoch == hyper.epochs - 1:
            log.info("localizer epoch %d loss %.4f", epoch, losses[-1])
    return losses


def train_localizer(dataset, spec: FeatureSpec, hyper: LocalizerHyper | None = None) -> LocalizerModel:
    """Train the plane-offset regressor on ``[(Volume, BoundingBox), ...]``.

    Each volume contributes ``n_augment`` randomly translated copies besides
    itself; features are computed once per copy for a pool of edge voxels and
    every epoch draws ``samples_per_volume`` fresh pairs from each pool.
    """
    hyper = hyper or LocalizerHyper()
    if len(dataset) < 2:
        raise ValueError("need at least two training volumes")
    rng = np.random.default_rng(hyper.seed)
    pools = []
    for v, box in dataset:
        v = normalize(v, *hyper.window)
        cases = [(v, box)]
        for _ in range(hyper.n_augment):
            shift = np.rint(
                rng.uniform(-hyper.max_shift_mm, hyper.max_shift_mm, 3) / np.asarray(v.spacing)
            ).astype(int)
            cases.append(shift_case(v, box, shift))
        for cv, cb in cases:
            pools.append(_training_pool(cv, cb, spec, hyper, rng))
    net = nn.Model(regressor_specs(spec.n, hyper.hidden), seed=hyper.seed)
    losses = fit_regressor(net, pools, hyper, rng)
    net.meta.update({"epochs": hyper.epochs, "kind": "localizer"})
    return LocalizerModel(net, spec, tuple(hyper.window), hyper.target_scale,
                          (hyper.canny_sigma, hyper.canny_low, hyper.canny_high), losses)


def predict_votes(model: LocalizerModel, v: Volume, max_voxels: int = 10000, seed: int = 0) -> VoteSet:
    """Every (sub-sampled) edge voxel votes for all six planes."""
    vn = normalize(v, *model.window)
    edges = canny_edges(vn, *model.canny)
    if len(edges) > max_voxels:
        rng = np.random.default_rng(seed)
        edges = edges[np.sort(rng.choice(len(edges), max_voxels, replace=False))]
    offsets = model.predict_offsets(extract_features(vn, edges, model.spec))
    return VoteSet(invert_targets(offsets, edges).T)


def localize(model: LocalizerModel, v: Volume, tolerance: int = 15, max_voxels: int = 10000,
             seed: int = 0) -> tuple[BoundingBox, VoteSet]:
    """Aggregated box grown by ``tolerance`` voxels, plus the raw votes."""
    votes = predict_votes(model, v, max_voxels, seed)
    box = aggregate_votes(votes, v.dims)
    return expand_box(box, tolerance, v.dims), votes


def save_localizer(model: LocalizerModel, path: str) -> None:
    net = model.net.copy()
    net.meta.update({
        "feature_spec": model.spec.to_dict(),
        "window": list(model.window),
        "target_scale": model.target_scale,
        "canny": list(model.canny),
        "losses": list(model.losses),
    })
    nn.save_checkpoint(net, path)


def load_localizer(path: str) -> LocalizerModel:
    net = nn.load_checkpoint(path)
    if "feature_spec" not in net.meta:
        raise nn.CheckpointError(f"{path} is not a localizer checkpoint")
    meta = net.meta
    return LocalizerModel(net, FeatureSpec.from_dict(meta["feature_spec"]), tuple(meta["window"]),
                          float(meta["target_scale"]), tuple(meta["canny"]), list(meta["losses"]))

