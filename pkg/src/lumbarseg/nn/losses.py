"""Objective functions returning ``(loss, d loss / d input)``."""

import numpy as np


def loss_mse(pred, target):
    """Mean squared error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def loss_softmax_ce(logits, labels, n_classes=None):
    """Per-pixel softmax cross-entropy averaged over pixels.

    ``logits`` are channels-last, ``(..., C)``; ``labels`` has the leading shape.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    c = logits.shape[-1]
    if n_classes is not None and n_classes != c:
        raise ValueError(f"logits carry {c} classes, expected {n_classes}")
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits)
    lab = labels.astype(np.intp)[..., None]
    npix = labels.size
    loss = -np.take_along_axis(logp, lab, axis=-1).sum() / npix
    grad = np.exp(logp)
    np.put_along_axis(grad, lab, np.take_along_axis(grad, lab, axis=-1) - 1.0, axis=-1)
    return float(loss), grad / npix
