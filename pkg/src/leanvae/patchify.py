"""Frequency-domain patchify / unpatchify.

Frame 0 goes through a 2D Haar DWT and is cut into 4x4 patches; frames 1..T
go through a 3D Haar DWT and are cut into 2x4x4 patches. The LC subband
(3 channels) and the concatenated HC subbands (9 for images, 21 for video)
are projected separately. Inside a patch, values are flattened channel-major,
then (t, h, w) row-major.

With ``has_first_frame=False`` the input is a continuation chunk of 4k frames
and only the video path runs (used by streaming inference).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .config import ArchVariant, ModelConfig
from .errors import DimensionError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor, concat, reshape, slice_axis, transpose
from .wavelet import wavelet_merge, wavelet_split

VIDEO_PATCH = (2, 4, 4)
IMAGE_PATCH = (4, 4)
RGB_VIDEO_PATCH = (4, 8, 8)
RGB_IMAGE_PATCH = (8, 8)


@dataclass
class PatchEmbeddings:
    pL: Tensor
    pH: Tensor | None


def to_patches(v: Tensor, patch: Sequence[int]) -> Tensor:
    """(..., *dims, C) -> (..., *dims/patch, C * prod(patch))."""
    n = len(patch)
    lead = v.shape[:v.ndim - n - 1]
    dims = v.shape[len(lead):-1]
    C = v.shape[-1]
    if any(d % p for d, p in zip(dims, patch)):
        raise DimensionError(f"extents {dims} not divisible by patch {tuple(patch)}")
    L = len(lead)
    grid = tuple(d // p for d, p in zip(dims, patch))
    split_shape = lead + sum(((g, p) for g, p in zip(grid, patch)), ()) + (C,)
    perm = list(range(L)) + [L + 2 * i for i in range(n)] + [L + 2 * n] + [L + 2 * i + 1 for i in range(n)]
    return reshape(transpose(reshape(v, split_shape), perm), lead + grid + (C * prod(patch),))


def from_patches(t: Tensor, patch: Sequence[int], channels: int) -> Tensor:
    """Inverse of :func:`to_patches`."""
    n = len(patch)
    if t.shape[-1] != channels * prod(patch):
        raise DimensionError(f"token width {t.shape[-1]} != {channels} x {prod(patch)}")
    lead = t.shape[:t.ndim - n - 1]
    grid = t.shape[len(lead):-1]
    L = len(lead)
    v = reshape(t, lead + grid + (channels,) + tuple(patch))
    # axes now: lead, grid_0..grid_{n-1}, C, patch_0..patch_{n-1}
    perm = list(range(L))
    for i in range(n):
        perm += [L + i, L + n + 1 + i]
    perm.append(L + n)
    dims = tuple(g * p for g, p in zip(grid, patch))
    return reshape(transpose(v, perm), lead + dims + (channels,))


def _add_frame_axis(t: Tensor) -> Tensor:
    return reshape(t, t.shape[:-3] + (1,) + t.shape[-3:])


def check_video_shape(shape: Sequence[int], has_first_frame: bool = True) -> None:
    if len(shape) < 4 or shape[-1] != 3:
        raise DimensionError(f"expected (..., frames, H, W, 3), got {tuple(shape)}")
    F, H, W = shape[-4:-1]
    if H % 8 or W % 8 or H == 0 or W == 0:
        raise DimensionError(f"H and W must be positive multiples of 8, got {H}x{W}")
    if has_first_frame and (F < 1 or (F - 1) % 4):
        raise DimensionError(f"frame count must be 1 + 4k, got {F}")
    if not has_first_frame and (F < 4 or F % 4):
        raise DimensionError(f"continuation chunks need 4k frames (k >= 1), got {F}")


class Patchifier(Module):
    """Wavelet patch projections (Variant1/2) or raw-RGB ones (Variant3)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        dt = config.np_dtype
        self.rgb = config.variant is ArchVariant.VARIANT3
        self.patch_norm = config.patch_norm
        if self.rgb:
            vid_in, img_in = 3 * prod(RGB_VIDEO_PATCH), 3 * prod(RGB_IMAGE_PATCH)
            self.video = Linear(vid_in, config.D, rng, dt)
            self.image = Linear(img_in, config.D, rng, dt)
            self.inv_video = Linear(config.D, vid_in, rng, dt)
            self.inv_image = Linear(config.D, img_in, rng, dt)
            if self.patch_norm:
                self.norm_video = LayerNorm(vid_in, dt)
                self.norm_image = LayerNorm(img_in, dt)
            return
        v_lc, v_hc = 3 * prod(VIDEO_PATCH), 21 * prod(VIDEO_PATCH)
        i_lc, i_hc = 3 * prod(IMAGE_PATCH), 9 * prod(IMAGE_PATCH)
        self.video_lc = Linear(v_lc, config.d2, rng, dt)
        self.video_hc = Linear(v_hc, config.d1, rng, dt)
        self.image_lc = Linear(i_lc, config.d2, rng, dt)
        self.image_hc = Linear(i_hc, config.d1, rng, dt)
        self.inv_video_lc = Linear(config.d2, v_lc, rng, dt)
        self.inv_video_hc = Linear(config.d1, v_hc, rng, dt)
        self.inv_image_lc = Linear(config.d2, i_lc, rng, dt)
        self.inv_image_hc = Linear(config.d1, i_hc, rng, dt)
        if self.patch_norm:
            self.norm_video_lc = LayerNorm(v_lc, dt)
            self.norm_video_hc = LayerNorm(v_hc, dt)
            self.norm_image_lc = LayerNorm(i_lc, dt)
            self.norm_image_hc = LayerNorm(i_hc, dt)

    def _embed(self, raw: Tensor, proj: Linear, norm_name: str) -> Tensor:
        if self.patch_norm:
            raw = getattr(self, norm_name)(raw)
        return proj(raw)

    # -- forward ----------------------------------------------------------
    def patchify(self, x: Tensor, has_first_frame: bool = True) -> PatchEmbeddings:
        check_video_shape(x.shape, has_first_frame)
        F = x.shape[-4]
        lows, highs = [], []
        if has_first_frame:
            frame0 = reshape(slice_axis(x, 0, 1, -4), x.shape[:-4] + x.shape[-3:])
            lo, hi = self._image_tokens(frame0)
            lows.append(_add_frame_axis(lo))
            if hi is not None:
                highs.append(_add_frame_axis(hi))
        start = 1 if has_first_frame else 0
        if F > start:
            lo, hi = self._video_tokens(slice_axis(x, start, F, -4))
            lows.append(lo)
            if hi is not None:
                highs.append(hi)
        pL = concat(lows, axis=-4)
        pH = concat(highs, axis=-4) if highs else None
        return PatchEmbeddings(pL, pH)

    def _image_tokens(self, frame: Tensor) -> tuple[Tensor, Tensor | None]:
        if self.rgb:
            return self._embed(to_patches(frame, RGB_IMAGE_PATCH), self.image, "norm_image"), None
        bands = wavelet_split(frame, (-3, -2))
        C = bands.shape[-1]
        lc = to_patches(slice_axis(bands, 0, 3, -1), IMAGE_PATCH)
        hc = to_patches(slice_axis(bands, 3, C, -1), IMAGE_PATCH)
        return (self._embed(lc, self.image_lc, "norm_image_lc"),
                self._embed(hc, self.image_hc, "norm_image_hc"))

    def _video_tokens(self, frames: Tensor) -> tuple[Tensor, Tensor | None]:
        if self.rgb:
            return self._embed(to_patches(frames, RGB_VIDEO_PATCH), self.video, "norm_video"), None
        bands = wavelet_split(frames, (-4, -3, -2))
        C = bands.shape[-1]
        lc = to_patches(slice_axis(bands, 0, 3, -1), VIDEO_PATCH)
        hc = to_patches(slice_axis(bands, 3, C, -1), VIDEO_PATCH)
        return (self._embed(lc, self.video_lc, "norm_video_lc"),
                self._embed(hc, self.video_hc, "norm_video_hc"))

    # -- inverse ----------------------------------------------------------
    def unpatchify(self, pL: Tensor, pH: Tensor | None, has_first_frame: bool = True) -> Tensor:
        if self.rgb:
            if pH is not None:
                raise DimensionError("RGB patchifier has a single embedding stream")
        elif pH is None or pL.shape[:-1] != pH.shape[:-1]:
            raise DimensionError("pL and pH token grids differ")
        if pL.ndim < 4:
            raise DimensionError(f"expected token grid (..., T', H', W', C), got {pL.shape}")
        rows = pL.shape[-4]
        if rows < 1:
            raise DimensionError("empty token grid")
        frames = []
        start = 0
        if has_first_frame:
            lo = reshape(slice_axis(pL, 0, 1, -4), pL.shape[:-4] + pL.shape[-3:])
            hi = None if pH is None else reshape(slice_axis(pH, 0, 1, -4), pH.shape[:-4] + pH.shape[-3:])
            frames.append(_add_frame_axis(self._image_pixels(lo, hi)))
            start = 1
        if rows > start:
            lo = slice_axis(pL, start, rows, -4)
            hi = None if pH is None else slice_axis(pH, start, rows, -4)
            frames.append(self._video_pixels(lo, hi))
        return concat(frames, axis=-4)

    def _image_pixels(self, lo: Tensor, hi: Tensor | None) -> Tensor:
        if self.rgb:
            return from_patches(self.inv_image(lo), RGB_IMAGE_PATCH, 3)
        lc = from_patches(self.inv_image_lc(lo), IMAGE_PATCH, 3)
        hc = from_patches(self.inv_image_hc(hi), IMAGE_PATCH, 9)
        return wavelet_merge(concat([lc, hc], axis=-1), (-3, -2))

    def _video_pixels(self, lo: Tensor, hi: Tensor | None) -> Tensor:
        if self.rgb:
            return from_patches(self.inv_video(lo), RGB_VIDEO_PATCH, 3)
        lc = from_patches(self.inv_video_lc(lo), VIDEO_PATCH, 3)
        hc = from_patches(self.inv_video_hc(hi), VIDEO_PATCH, 21)
        return wavelet_merge(concat([lc, hc], axis=-1), (-4, -3, -2))


def patchify(x: Tensor, patchifier: Patchifier, has_first_frame: bool = True) -> PatchEmbeddings:
    return patchifier.patchify(x, has_first_frame)


def unpatchify(pL_hat: Tensor, pH_hat: Tensor | None, patchifier: Patchifier,
               has_first_frame: bool = True) -> Tensor:
    return patchifier.unpatchify(pL_hat, pH_hat, has_first_frame)
