"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def check_video_batch(X, *, dtype=np.float32, allow_single: bool = True) -> np.ndarray:
    """Coerce ``X`` to a float batch of clips shaped (N, 1+4k, 8m, 8n, 3).

    A single clip (4-D input) is promoted to a batch of one when
    ``allow_single`` is set. Values must be finite and lie in [-1, 1].
    """
    arr = np.asarray(X)
    if arr.dtype == object:
        raise InputError("video batch must be a numeric array")
    arr = arr.astype(dtype, copy=False)
    if arr.ndim == 4 and allow_single:
        arr = arr[None]
    if arr.ndim != 5:
        raise InputError(f"expected (N, frames, H, W, 3), got shape {arr.shape}")
    N, F, H, W, C = arr.shape
    if N < 1:
        raise InputError("empty video batch")
    if C != 3:
        raise InputError(f"expected 3 colour channels, got {C}")
    if F < 1 or (F - 1) % 4:
        raise InputError(f"frame count must be 1 + 4k, got {F}")
    if H < 8 or W < 8 or H % 8 or W % 8:
        raise InputError(f"height and width must be positive multiples of 8, got {H}x{W}")
    if not np.all(np.isfinite(arr)):
        raise InputError("video contains non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise InputError("video values must lie in [-1, 1]")
    return arr


def check_latent_batch(Z, d: int, *, dtype=np.float32) -> np.ndarray:
    """Coerce ``Z`` to a latent batch shaped (N, 1+k, m, n, d)."""
    arr = np.asarray(Z).astype(dtype, copy=False)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != d:
        raise InputError(f"expected latents (N, T', H', W', {d}), got shape {arr.shape}")
    if min(arr.shape[:-1]) < 1:
        raise InputError(f"latent grid has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("latents contain non-finite values")
    return arr


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
