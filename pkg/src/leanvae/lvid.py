"""LVID raw video container: a fixed header followed by RGB8 frames.

Header (little endian, 20 bytes)::

    magic    4s   b"LVID"
    version  u8   1
    colour   u8   1 (RGB8)
    reserved u16  0
    frames   u32
    height   u32
    width    u32

The payload is ``frames * height * width * 3`` bytes, frame-major, each frame
row-major with interleaved RGB.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import InputError, IntegrityError

MAGIC = b"LVID"
VERSION = 1
RGB8 = 1
_HEADER = struct.Struct("<4sBBHIII")


def to_signed(frames_u8: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [0, 255] -> [-1, 1]."""
    dtype = np.dtype(dtype)
    return np.asarray(frames_u8, dtype=dtype) / dtype.type(127.5) - dtype.type(1.0)


def to_uint8(video: np.ndarray) -> np.ndarray:
    """[-1, 1] -> uint8 with rounding and clipping."""
    v = (np.asarray(video, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def encode_lvid(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames)
    if frames.dtype != np.uint8:
        raise InputError(f"LVID payload must be uint8, got {frames.dtype}")
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise InputError(f"expected (frames, H, W, 3), got {frames.shape}")
    F, H, W, _ = frames.shape
    if F < 1 or (F - 1) % 4:
        raise InputError(f"frame count must be 1 + 4k, got {F}")
    return _HEADER.pack(MAGIC, VERSION, RGB8, 0, F, H, W) + np.ascontiguousarray(frames).tobytes()


def decode_lvid(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise IntegrityError(f"LVID: truncated header ({len(buf)} bytes)")
    magic, version, colour, _, F, H, W = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise IntegrityError(f"LVID: bad magic {magic!r}")
    if version != VERSION:
        raise IntegrityError(f"LVID: unsupported version {version}")
    if colour != RGB8:
        raise IntegrityError(f"LVID: unsupported colour space {colour}")
    n = F * H * W * 3
    if len(buf) - _HEADER.size != n:
        raise IntegrityError(f"LVID: payload is {len(buf) - _HEADER.size} bytes, header says {n}")
    if F < 1 or (F - 1) % 4:
        raise IntegrityError(f"LVID: frame count must be 1 + 4k, got {F}")
    return np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size).reshape(F, H, W, 3).copy()


def save_lvid(path: str | os.PathLike, frames: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_lvid(frames))


def load_lvid(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_lvid(fh.read())
