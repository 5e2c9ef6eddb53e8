"""Central finite-difference gradient checks (fp64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                 indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences; only ``indices`` (flat) are filled when given."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().data)
        flat[i] = orig - h
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    The floor keeps entries whose true gradient is (near) zero from turning
    round-off into a large ratio.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              floor: float = 1e-6, max_entries: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Return the worst relative error over all ``inputs``.

    ``fn`` must rebuild the graph on every call and return a scalar; the
    inputs must be fp64 tensors with ``requires_grad`` set.  With
    ``max_entries`` each input is probed at that many random coordinates
    instead of all of them.
    """
    for x in inputs:
        x.grad = None
    loss = fn()
    loss.backward()
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in inputs]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for x, a in zip(inputs, analytic):
        if max_entries is None or x.size <= max_entries:
            idx = np.arange(x.size)
        else:
            idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        num = numeric_grad(fn, x, h, idx)
        worst = max(worst, max_relative_error(a.reshape(-1)[idx], num.reshape(-1)[idx], floor))
    return worst
