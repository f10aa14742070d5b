"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-6, index=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``t`` (all entries or one flat index)."""
    flat = t.data.reshape(-1)
    targets = range(flat.size) if index is None else [index]
    out = np.zeros(flat.size if index is None else 1)
    for j, i in enumerate(targets):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn().item()
        flat[i] = orig - step
        lo = fn().item()
        flat[i] = orig
        out[j] = (hi - lo) / (2 * step)
    return out.reshape(t.shape) if index is None else out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| / max(1, |numeric|), elementwise."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n))))


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-6,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` must rebuild the forward pass on every call. With ``samples`` set,
    only that many randomly chosen entries per tensor are probed.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if samples is None or samples >= t.data.size:
            worst = max(worst, relative_error(analytic, numeric_grad(fn, t, step)))
        else:
            picks = (rng or np.random.default_rng(0)).choice(t.data.size, size=samples, replace=False)
            for i in picks:
                num = numeric_grad(fn, t, step, index=int(i))
                worst = max(worst, relative_error(analytic.reshape(-1)[i : i + 1], num))
    return worst
