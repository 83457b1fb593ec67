"""Layer kernels with exact backward passes.

Image tensors are channels-last, ``(N, H, W, C)``; dense tensors are ``(N, F)``.
Each layer is stateless: parameters are passed in, and ``forward`` returns the
cache that ``backward`` needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("dense", "relu", "conv2d", "maxpool2", "upconv2", "concat", "softmax")


class ShapeError(ValueError):
    """Inconsistent tensor or parameter shapes."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a :class:`~lumbarseg.nn.model.Model`.

    ``n_in``/``n_out`` are features for dense layers and channels for conv /
    upconv layers. ``skip`` is the index of the layer whose output a concat
    layer appends (channel axis, after the current tensor).
    """

    kind: str
    n_in: int = 0
    n_out: int = 0
    k: int = 0
    pad: int = 0
    skip: int = -1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out,
                "k": self.k, "pad": self.pad, "skip": self.skip}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(n_in, n_out):
    return LayerSpec("dense", n_in, n_out)


def relu():
    return LayerSpec("relu")


def conv2d(n_in, n_out, k=3, pad=None):
    return LayerSpec("conv2d", n_in, n_out, k, (k - 1) // 2 if pad is None else pad)


def maxpool2():
    return LayerSpec("maxpool2")


def upconv2(n_in, n_out):
    return LayerSpec("upconv2", n_in, n_out, 2)


def concat(skip_id):
    return LayerSpec("concat", skip=skip_id)


def softmax():
    return LayerSpec("softmax")


def param_shapes(spec: LayerSpec) -> list[tuple[int, ...]]:
    if spec.kind == "dense":
        return [(spec.n_in, spec.n_out), (spec.n_out,)]
    if spec.kind == "conv2d":
        return [(spec.k, spec.k, spec.n_in, spec.n_out), (spec.n_out,)]
    if spec.kind == "upconv2":
        return [(2, 2, spec.n_in, spec.n_out), (spec.n_out,)]
    return []


def init_params(spec: LayerSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    shapes = param_shapes(spec)
    if not shapes:
        return []
    if spec.kind == "dense":
        fan_in = spec.n_in
    elif spec.kind == "conv2d":
        fan_in = spec.n_in * spec.k * spec.k
    else:  # upconv2: each output pixel sees one tap per input channel
        fan_in = spec.n_in
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shapes[0])
    return [w, np.zeros(shapes[1])]


# ---------------------------------------------------------------- kernels


def _dense_fwd(p, x):
    w, b = p
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense expects (N, {w.shape[0]}), got {x.shape}")
    return x @ w + b, x


def _dense_bwd(p, x, dy):
    w, _ = p
    return [x.T @ dy, dy.sum(axis=0)], dy @ w.T


def _relu_fwd(p, x):
    mask = x > 0
    return x * mask, mask


def _relu_bwd(p, mask, dy):
    return [], dy * mask


def _conv_fwd(p, x, k, pad):
    w, b = p
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d expects (N, H, W, {w.shape[2]}), got {x.shape}")
    n, h, wd, c = x.shape
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d input {x.shape} too small for kernel {k}")
    if pad:
        xp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c))
        xp[:, pad:pad + h, pad:pad + wd] = x
    else:
        xp = x
    cols = np.empty((n, ho, wo, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho, j:j + wo, :]
    cols = cols.reshape(n * ho * wo, k * k * c)
    y = cols @ w.reshape(k * k * c, -1) + b
    return y.reshape(n, ho, wo, -1), (cols, x.shape)


def _conv_bwd(p, cache, dy, k, pad):
    w, _ = p
    cols, (n, h, wd, c) = cache
    _, ho, wo, o = dy.shape
    d2 = dy.reshape(-1, o)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(k * k * c, o).T).reshape(n, ho, wo, k, k, c)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return [dw, db], dxp[:, pad:pad + h, pad:pad + wd, :]


def _pool_fwd(p, x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    xr = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    xr = xr.reshape(n, h // 2, w // 2, c, 4)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def _pool_bwd(p, cache, dy):
    idx, (n, h, w, c) = cache
    dxr = np.zeros((n, h // 2, w // 2, c, 4))
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    dx = dxr.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return [], dx.reshape(n, h, w, c)


def _up_fwd(p, x):
    w, b = p
    if x.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"upconv2 expects (N, H, W, {w.shape[2]}), got {x.shape}")
    n, h, wd, c = x.shape
    o = w.shape[3]
    wm = w.transpose(2, 0, 1, 3).reshape(c, 4 * o)
    y = (x.reshape(-1, c) @ wm).reshape(n, h, wd, 2, 2, o).transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(n, 2 * h, 2 * wd, o) + b, x


def _up_bwd(p, x, dy):
    w, _ = p
    n, h, wd, c = x.shape
    o = w.shape[3]
    dyr = dy.reshape(n, h, 2, wd, 2, o).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * o)
    x2 = x.reshape(-1, c)
    dw = (x2.T @ dyr).reshape(c, 2, 2, o).transpose(1, 2, 0, 3)
    wm = w.transpose(2, 0, 1, 3).reshape(c, 4 * o)
    dx = (dyr @ wm.T).reshape(n, h, wd, c)
    return [dw, dy.sum(axis=(0, 1, 2))], dx


def _softmax_fwd(p, x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return s, s


def _softmax_bwd(p, s, dy):
    return [], s * (dy - (dy * s).sum(axis=-1, keepdims=True))


def forward(spec: LayerSpec, params, x, skip=None):
    """Run one layer; returns ``(y, cache)``."""
    kind = spec.kind
    if kind == "dense":
        return _dense_fwd(params, x)
    if kind == "relu":
        return _relu_fwd(params, x)
    if kind == "conv2d":
        return _conv_fwd(params, x, spec.k, spec.pad)
    if kind == "maxpool2":
        return _pool_fwd(params, x)
    if kind == "upconv2":
        return _up_fwd(params, x)
    if kind == "softmax":
        return _softmax_fwd(params, x)
    # concat
    if skip is None or skip.shape[:-1] != x.shape[:-1]:
        raise ShapeError(
            f"concat needs equal leading extents, got {x.shape} and "
            f"{None if skip is None else skip.shape}"
        )
    return np.concatenate([x, skip], axis=-1), x.shape[-1]


def backward(spec: LayerSpec, params, cache, dy):
    """Returns ``(param_grads, dx)``; for concat ``dx`` is ``(d_current, d_skip)``."""
    kind = spec.kind
    if kind == "dense":
        return _dense_bwd(params, cache, dy)
    if kind == "relu":
        return _relu_bwd(params, cache, dy)
    if kind == "conv2d":
        return _conv_bwd(params, cache, dy, spec.k, spec.pad)
    if kind == "maxpool2":
        return _pool_bwd(params, cache, dy)
    if kind == "upconv2":
        return _up_bwd(params, cache, dy)
    if kind == "softmax":
        return _softmax_bwd(params, cache, dy)
    c = cache
    return [], (dy[..., :c], dy[..., c:])
