"""Sequential networks with skip connections."""

from __future__ import annotations

import copy

import numpy as np

from . import layers as L
from .layers import LayerSpec, ShapeError


def validate_specs(specs: list[LayerSpec]) -> list[int]:
    """Check channel/feature chaining; returns the output width of every layer."""
    if not specs:
        raise ShapeError("empty layer list")
    first = specs[0]
    if first.kind not in ("dense", "conv2d"):
        raise ShapeError("first layer must be dense or conv2d")
    width = first.n_in
    widths = []
    for idx, spec in enumerate(specs):
        if spec.kind in ("dense", "conv2d", "upconv2"):
            if spec.n_in != width:
                raise ShapeError(f"layer {idx} ({spec.kind}) expects {spec.n_in} inputs, gets {width}")
            if spec.n_in < 1 or spec.n_out < 1:
                raise ShapeError(f"layer {idx} has non-positive width")
            if spec.kind == "conv2d" and (spec.k < 1 or spec.pad < 0):
                raise ShapeError(f"layer {idx} has invalid kernel/padding")
            width = spec.n_out
        elif spec.kind == "concat":
            if not 0 <= spec.skip < idx:
                raise ShapeError(f"layer {idx} concat refers to layer {spec.skip}")
            width += widths[spec.skip]
        widths.append(width)
    return widths


class Model:
    """Layer list plus parameters.

    ``params[i]`` holds the tensors of layer ``i`` (empty for parameter-free
    layers). ``meta`` carries free-form JSON-serialisable metadata (training
    seed, epoch count, normalisation window, ...).
    """

    def __init__(self, specs, params=None, seed: int = 0, meta: dict | None = None):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in specs]
        self.widths = validate_specs(self.specs)
        if params is None:
            rng = np.random.default_rng(seed)
            params = [L.init_params(s, rng) for s in self.specs]
        else:
            params = [[np.array(t, dtype=np.float64) for t in p] for p in params]
            if len(params) != len(self.specs):
                raise ShapeError("parameter list does not match layer list")
            for idx, (spec, p) in enumerate(zip(self.specs, params)):
                shapes = L.param_shapes(spec)
                if [t.shape for t in p] != shapes:
                    raise ShapeError(
                        f"layer {idx} parameters {[t.shape for t in p]} != expected {shapes}"
                    )
        self.params = params
        self.meta = dict(meta or {})
        self.meta.setdefault("seed", seed)

    @property
    def n_in(self) -> int:
        return self.specs[0].n_in

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        return [t for p in self.params for t in p]

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def copy(self) -> "Model":
        return Model(self.specs, [[t.copy() for t in p] for p in self.params],
                     meta=copy.deepcopy(self.meta))

    def forward(self, x, upto: int | None = None):
        """Run layers ``0..upto-1`` (all by default); returns ``(output, cache)``."""
        x = np.asarray(x, dtype=np.float64)
        outputs, caches = [], []
        n = len(self.specs) if upto is None else upto
        for idx in range(n):
            spec = self.specs[idx]
            skip = outputs[spec.skip] if spec.kind == "concat" else None
            x, cache = L.forward(spec, self.params[idx], x, skip)
            outputs.append(x)
            caches.append(cache)
        return x, {"caches": caches, "n": n, "model": id(self)}

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Returns ``(param_grads, grad_in)``; grads follow :meth:`parameters` order."""
        if cache.get("model") != id(self) or cache["n"] != len(self.specs):
            raise ValueError("cache was not produced by a full forward of this model")
        caches = cache["caches"]
        pending: dict[int, np.ndarray] = {}
        grads: list[list[np.ndarray]] = [[] for _ in self.specs]
        dy = np.asarray(grad_out, dtype=np.float64)
        for idx in range(len(self.specs) - 1, -1, -1):
            if idx in pending:
                dy = dy + pending.pop(idx)
            spec = self.specs[idx]
            g, dx = L.backward(spec, self.params[idx], caches[idx], dy)
            if spec.kind == "concat":
                dx, dskip = dx
                pending[spec.skip] = pending.get(spec.skip, 0) + dskip
            grads[idx] = g
            dy = dx
        return [t for g in grads for t in g], dy
