"""Temporal tiling inference.

Cached mode is lossless: every causal convolution keeps the last two temporal
slices of its input, so a chunk sees exactly the padding window a full pass
would have seen. The patch stage needs no cache because chunks after the first
cover whole 4-frame blocks.

Overlapped mode runs each chunk from a fresh zero-padded state, discarding
the first ``overlap`` latent rows of every chunk after the first. It is the
approximate baseline.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .bottleneck import LatentGrid
from .errors import ChunkingError
from .model import LeanVAE
from .tensor import Tensor, no_grad


class StreamState:
    """Per-layer causal caches for one stream, keyed by layer name."""

    def __init__(self, config: dict | None = None):
        self.caches: dict[str, np.ndarray] = {}
        self.chunks = 0
        self.rows = 0
        self.config = dict(config or {})

    def get(self, key: str) -> np.ndarray | None:
        return self.caches.get(key)

    def put(self, key: str, value: np.ndarray) -> None:
        self.caches[key] = value

    @property
    def started(self) -> bool:
        return self.chunks > 0

    def nbytes(self) -> int:
        return sum(c.nbytes for c in self.caches.values())


def _new_state(model: LeanVAE) -> StreamState:
    return StreamState(model.config.to_dict())


def encode_chunk(model: LeanVAE, chunk, state: StreamState) -> LatentGrid:
    arr = chunk.data if isinstance(chunk, Tensor) else np.asarray(chunk)
    frames = arr.shape[-4] if arr.ndim >= 4 else 0
    first = not state.started
    if first and (frames < 1 or (frames - 1) % 4):
        raise ChunkingError(f"first chunk must have 1 + 4k frames, got {frames}")
    if not first and (frames < 4 or frames % 4):
        raise ChunkingError(f"chunk {state.chunks} must have a positive multiple of 4 frames, got {frames}")
    latent = model.encode(arr, mode="infer", stream=state, has_first_frame=first)
    state.chunks += 1
    state.rows += latent.z.shape[-4]
    return latent


def stream_encode(model: LeanVAE, chunks: Iterable, state: StreamState | None = None) -> list[LatentGrid]:
    """Encode consecutive frame chunks; concatenated latents equal a full encode."""
    state = state or _new_state(model)
    return [encode_chunk(model, c, state) for c in chunks]


def decode_chunk(model: LeanVAE, z, state: StreamState) -> np.ndarray:
    arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    if arr.ndim < 4 or arr.shape[-4] < 1:
        raise ChunkingError(f"latent chunk needs at least one temporal row, got shape {arr.shape}")
    first = not state.started
    out = model.decode(arr, stream=state, has_first_frame=first).data
    state.chunks += 1
    state.rows += arr.shape[-4]
    return out


def stream_decode(model: LeanVAE, latent_chunks: Iterable, state: StreamState | None = None) -> list[np.ndarray]:
    """Decode consecutive latent-row chunks; concatenated frames equal a full decode."""
    state = state or _new_state(model)
    out = []
    for z in latent_chunks:
        if isinstance(z, LatentGrid):
            z = z.z
        out.append(decode_chunk(model, z, state))
    return out


def split_frames(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    if sum(sizes) != x.shape[-4]:
        raise ChunkingError(f"chunk sizes {list(sizes)} do not cover {x.shape[-4]} frames")
    bounds = np.cumsum([0] + list(sizes))
    return [x[..., bounds[i]:bounds[i + 1], :, :, :] for i in range(len(sizes))]


def frame_chunk_sizes(frames: int, chunk: int) -> list[int]:
    """``[chunk, chunk-1, chunk-1, ...]`` as used by a chunksize-N tiling (e.g. 17 -> 5,4,4,4)."""
    if chunk < 1 or (chunk - 1) % 4:
        raise ChunkingError(f"chunk size must be 1 + 4k frames, got {chunk}")
    if frames < 1 or (frames - 1) % 4:
        raise ChunkingError(f"frame count must be 1 + 4k, got {frames}")
    sizes = [min(chunk, frames)]
    rest = frames - sizes[0]
    step = max(chunk - 1, 4)
    while rest > 0:
        sizes.append(min(step, rest))
        rest -= sizes[-1]
    return sizes


def latent_chunk_sizes(rows: int, chunk: int) -> list[int]:
    """Latent-row counts matching :func:`frame_chunk_sizes` for the same chunk size."""
    return [1 + (n - 1) // 4 if i == 0 else n // 4
            for i, n in enumerate(frame_chunk_sizes(4 * (rows - 1) + 1, chunk))]


def overlapped_encode(model: LeanVAE, x, chunksize: int, overlap: int) -> LatentGrid:
    """Independent chunks of ``chunksize`` latent rows overlapping by ``overlap`` rows.

    Row 0 is frame 0; row r >= 1 covers frames 4r-3..4r. Each chunk is encoded
    from zero padding (chunks after the first have no image frame); rows already
    produced by an earlier chunk are kept from that chunk.
    """
    if not chunksize > overlap >= 0:
        raise ChunkingError(f"need chunksize > overlap >= 0, got {chunksize}, {overlap}")
    arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    frames = arr.shape[-4]
    if (frames - 1) % 4:
        raise ChunkingError(f"frame count must be 1 + 4k, got {frames}")
    rows = 1 + (frames - 1) // 4
    step = chunksize - overlap
    pieces, produced, start = [], 0, 0
    while produced < rows:
        stop = min(start + chunksize, rows)
        if start == 0:
            clip = arr[..., : 1 + 4 * (stop - 1), :, :, :]
        else:
            clip = arr[..., 4 * start - 3: 4 * (stop - 1) + 1, :, :, :]
        with no_grad():
            z = model.encode(clip, has_first_frame=(start == 0)).z.data
        keep = z[..., produced - start:, :, :, :]
        pieces.append(keep)
        produced = stop
        start += step
    z = Tensor(np.concatenate(pieces, axis=-4))
    return LatentGrid(z, z)
