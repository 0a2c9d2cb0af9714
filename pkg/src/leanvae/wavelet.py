"""Single-level orthonormal Haar transforms in 2D and 3D.

Each axis is split into a low band ``(even + odd) / sqrt(2)`` and a high band
``(even - odd) / sqrt(2)``. Subbands are numbered by their per-axis bits with
the first transformed axis as the most significant bit, so for (T, H, W) the
order is lll, llh, lhl, lhh, hll, hlh, hhl, hhh and for (H, W) it is
ll, lh, hl, hh. High subbands are concatenated on the channel axis in that
order, subband-major: channel ``s * C + c`` holds subband ``s + 1`` of input
channel ``c``.

Because the transform is orthonormal, the synthesis operator is both the
inverse and the adjoint of the analysis operator; the differentiable
:func:`wavelet_split` / :func:`wavelet_merge` pair uses that for backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .tensor import Tensor

INV_SQRT2 = 1.0 / math.sqrt(2.0)

SUBBANDS_3D = ("lll", "llh", "lhl", "lhh", "hll", "hlh", "hhl", "hhh")
SUBBANDS_2D = ("ll", "lh", "hl", "hh")


def _take(x: np.ndarray, axis: int, sl: slice) -> np.ndarray:
    index = [slice(None)] * x.ndim
    index[axis] = sl
    return x[tuple(index)]


def _analysis_1d(x: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[axis] % 2:
        raise DimensionError(f"Haar analysis needs an even extent, axis {axis} has {x.shape[axis]}")
    even = _take(x, axis, slice(0, None, 2))
    odd = _take(x, axis, slice(1, None, 2))
    return (even + odd) * INV_SQRT2, (even - odd) * INV_SQRT2


def _synthesis_1d(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    if lo.shape != hi.shape:
        raise DimensionError(f"Haar synthesis: band shapes differ {lo.shape} vs {hi.shape}")
    axis = axis % lo.ndim
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.result_type(lo, hi))
    index = [slice(None)] * lo.ndim
    index[axis] = slice(0, None, 2)
    out[tuple(index)] = (lo + hi) * INV_SQRT2
    index[axis] = slice(1, None, 2)
    out[tuple(index)] = (lo - hi) * INV_SQRT2
    return out


def haar_analysis(x: np.ndarray, axes: Sequence[int]) -> list[np.ndarray]:
    """All ``2**len(axes)`` subbands of ``x``, in bit order."""
    bands = [np.asarray(x)]
    for axis in axes:
        split = []
        for band in bands:
            split.extend(_analysis_1d(band, axis))
        bands = split
    return bands


def haar_synthesis(bands: Sequence[np.ndarray], axes: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`haar_analysis`."""
    if len(bands) != 2 ** len(axes):
        raise DimensionError(f"expected {2 ** len(axes)} subbands, got {len(bands)}")
    shape = bands[0].shape
    if any(b.shape != shape for b in bands):
        raise DimensionError(f"inconsistent subband shapes {[b.shape for b in bands]}")
    bands = list(bands)
    for axis in reversed(axes):
        bands = [_synthesis_1d(bands[i], bands[i + 1], axis) for i in range(0, len(bands), 2)]
    return bands[0]


@dataclass(frozen=True)
class SubbandSet3D:
    """``lll`` is (C, T/2, H/2, W/2); ``high`` is (7C, T/2, H/2, W/2)."""

    lll: np.ndarray
    high: np.ndarray


@dataclass(frozen=True)
class SubbandSet2D:
    """``ll`` is (C, H/2, W/2); ``high`` is (3C, H/2, W/2)."""

    ll: np.ndarray
    high: np.ndarray


def _require_even(x: np.ndarray, ndim: int, name: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{name}: expected a {ndim}-d array, got shape {x.shape}")
    odd = [n for n in x.shape[1:] if n % 2]
    if odd:
        raise DimensionError(f"{name}: spatial/temporal extents must be even, got {x.shape[1:]}")


def dwt3(x: np.ndarray) -> SubbandSet3D:
    """3D Haar DWT of a (C, T, H, W) volume, transforming T, then H, then W."""
    x = np.asarray(x)
    _require_even(x, 4, "dwt3")
    bands = haar_analysis(x, (1, 2, 3))
    return SubbandSet3D(lll=bands[0], high=np.concatenate(bands[1:], axis=0))


def idwt3(s: SubbandSet3D) -> np.ndarray:
    lll, high = np.asarray(s.lll), np.asarray(s.high)
    if lll.ndim != 4 or high.shape != (7 * lll.shape[0],) + lll.shape[1:]:
        raise DimensionError(f"idwt3: inconsistent subbands lll {lll.shape}, high {high.shape}")
    return haar_synthesis([lll] + np.split(high, 7, axis=0), (1, 2, 3))


def dwt2(x: np.ndarray) -> SubbandSet2D:
    """2D Haar DWT of a (C, H, W) image."""
    x = np.asarray(x)
    _require_even(x, 3, "dwt2")
    bands = haar_analysis(x, (1, 2))
    return SubbandSet2D(ll=bands[0], high=np.concatenate(bands[1:], axis=0))


def idwt2(s: SubbandSet2D) -> np.ndarray:
    ll, high = np.asarray(s.ll), np.asarray(s.high)
    if ll.ndim != 3 or high.shape != (3 * ll.shape[0],) + ll.shape[1:]:
        raise DimensionError(f"idwt2: inconsistent subbands ll {ll.shape}, high {high.shape}")
    return haar_synthesis([ll] + np.split(high, 3, axis=0), (1, 2))


# -- channels-last differentiable forms used by the model -------------------------
def split_channels_last(x: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Analysis on ``axes`` of a (..., C) array, subbands stacked on the last axis."""
    return np.concatenate(haar_analysis(x, axes), axis=-1)


def merge_channels_last(y: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    n = 2 ** len(axes)
    if y.shape[-1] % n:
        raise DimensionError(f"merge: channel count {y.shape[-1]} not divisible by {n}")
    return haar_synthesis(np.split(y, n, axis=-1), axes)


def wavelet_split(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    return Tensor.from_op(
        split_channels_last(x.data, axes), (x,), lambda g: (merge_channels_last(g, axes),)
    )


def wavelet_merge(y: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    return Tensor.from_op(
        merge_channels_last(y.data, axes), (y,), lambda g: (split_channels_last(g, axes),)
    )
