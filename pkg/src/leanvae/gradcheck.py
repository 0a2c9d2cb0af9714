"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                 max_entries: int | None = None, rng: np.random.Generator | None = None):
    """Finite-difference gradient of scalar ``fn()`` w.r.t. ``param``.

    With ``max_entries`` only a random subset of coordinates is probed; the
    probed flat indices are returned alongside the estimates.
    """
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
    est = np.empty(idx.size)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        up = fn().item()
        flat[i] = old - eps
        down = fn().item()
        flat[i] = old
        est[n] = (up - down) / (2 * eps)
    return idx, est


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                    max_entries: int | None = 64, seed: int = 0) -> dict[int, float]:
    """Relative error between tape gradients and central differences per parameter.

    Parameters must be float64 for the tolerance to be meaningful.
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    errors = {}
    for k, (p, ga) in enumerate(zip(params, analytic)):
        idx, est = numeric_grad(fn, p, eps, max_entries, rng)
        errors[k] = relative_error(ga.reshape(-1)[idx], est)
    return errors
