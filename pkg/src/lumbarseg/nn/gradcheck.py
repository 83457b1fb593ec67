"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .model import Model


def relative_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(model: Model, x, loss_fn, n_coords: int = 200, eps: float = 1e-5,
               seed: int = 0, check_input: bool = False) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(output) -> (loss, grad_output)``. Coordinates are drawn uniformly
    over all parameter entries (all of them if there are fewer than
    ``n_coords``); with ``check_input`` the input gradient is sampled too.
    """
    x = np.array(x, dtype=np.float64)
    out, cache = model.forward(x)
    _, gout = loss_fn(out)
    grads, gin = model.backward(cache, gout)

    def objective():
        return loss_fn(model.forward(x)[0])[0]

    rng = np.random.default_rng(seed)
    targets = [(p, g) for p, g in zip(model.parameters(), grads)]
    if check_input:
        targets.append((x, gin))
    sizes = np.array([p.size for p, _ in targets])
    total = int(sizes.sum())
    if total <= n_coords:
        picks = np.arange(total)
    else:
        picks = rng.choice(total, size=n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat_idx in picks:
        t = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        arr, g = targets[t]
        i = np.unravel_index(flat_idx - offsets[t], arr.shape)
        old = arr[i]
        arr[i] = old + eps
        up = objective()
        arr[i] = old - eps
        down = objective()
        arr[i] = old
        numeric = (up - down) / (2 * eps)
        worst = max(worst, float(relative_error(g[i], numeric)))
    return worst
