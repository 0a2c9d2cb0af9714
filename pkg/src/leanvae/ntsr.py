"""NTSR binary tensor records and the NTSA archive used for checkpoints.

NTSR layout (all little-endian)::

    b"NTSR" | u8 version=1 | u8 dtype (1=f32, 2=f64) | u8 ndim | u8 reserved
    | ndim x u64 extents | row-major payload

NTSA archive layout::

    b"NTSA" | u8 version=1 | 3 reserved bytes | u64 manifest length
    | UTF-8 JSON manifest | concatenated NTSR records

The manifest maps each tensor name to its byte offset (relative to the first
record), record length, shape, dtype and CRC-32, and carries free-form
metadata (the model config).
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from typing import Any, Mapping

import numpy as np

from .errors import IntegrityError, VersionError

MAGIC = b"NTSR"
ARCHIVE_MAGIC = b"NTSA"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBBB")
_ARCHIVE_HEADER = struct.Struct("<4sB3xQ")


def encode_ntsr(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise TypeError(f"NTSR stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("NTSR supports at most 255 dimensions")
    head = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[dt], arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_ntsr(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one record starting at ``offset``; return (array, end offset)."""
    view = memoryview(buf)
    if len(view) - offset < _HEADER.size:
        raise IntegrityError("NTSR record truncated in header")
    magic, version, code, ndim, _ = _HEADER.unpack_from(view, offset)
    if magic != MAGIC:
        raise IntegrityError(f"bad NTSR magic {bytes(magic)!r}")
    if version != VERSION:
        raise VersionError(f"unsupported NTSR version {version}")
    if code not in _CODE_DTYPES:
        raise IntegrityError(f"unknown NTSR dtype code {code}")
    pos = offset + _HEADER.size
    if len(view) - pos < 8 * ndim:
        raise IntegrityError("NTSR record truncated in extents")
    shape = struct.unpack_from(f"<{ndim}Q", view, pos)
    pos += 8 * ndim
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(view) - pos < nbytes:
        raise IntegrityError(f"NTSR payload truncated: need {nbytes} bytes, have {len(view) - pos}")
    arr = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape).copy()
    return arr, pos + nbytes


def save_ntsr(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ntsr(arr))


def load_ntsr(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = decode_ntsr(buf)
    if end != len(buf):
        raise IntegrityError(f"{path}: {len(buf) - end} trailing bytes after NTSR record")
    return arr


def write_archive(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> dict:
    """Write named tensors plus metadata; return the manifest."""
    records, entries, offset = [], [], 0
    for name, arr in tensors.items():
        rec = encode_ntsr(arr)
        entries.append({
            "name": name,
            "offset": offset,
            "nbytes": len(rec),
            "shape": list(np.shape(arr)),
            "dtype": np.asarray(arr).dtype.name,
            "crc32": zlib.crc32(rec),
        })
        records.append(rec)
        offset += len(rec)
    manifest = {"version": VERSION, "meta": dict(meta), "tensors": entries, "payload_bytes": offset}
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, VERSION, len(blob)))
        f.write(blob)
        for rec in records:
            f.write(rec)
    return manifest


def read_manifest(buf: bytes) -> tuple[dict, int]:
    if len(buf) < _ARCHIVE_HEADER.size:
        raise IntegrityError("archive truncated in header")
    magic, version, mlen = _ARCHIVE_HEADER.unpack_from(buf, 0)
    if magic != ARCHIVE_MAGIC:
        raise IntegrityError(f"bad archive magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported archive version {version}")
    start = _ARCHIVE_HEADER.size
    if len(buf) < start + mlen:
        raise IntegrityError("archive truncated in manifest")
    try:
        manifest = json.loads(buf[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"archive manifest is not valid JSON: {exc}") from exc
    return manifest, start + mlen


def read_archive(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (manifest, tensors); every record is length- and CRC-checked."""
    with open(path, "rb") as f:
        buf = f.read()
    manifest, base = read_manifest(buf)
    if len(buf) != base + manifest.get("payload_bytes", -1):
        raise IntegrityError(
            f"{path}: archive size {len(buf)} does not match manifest ({base + manifest.get('payload_bytes', 0)})"
        )
    tensors = {}
    for entry in manifest["tensors"]:
        lo = base + entry["offset"]
        rec = buf[lo:lo + entry["nbytes"]]
        if len(rec) != entry["nbytes"] or zlib.crc32(rec) != entry["crc32"]:
            raise IntegrityError(f"{path}: tensor {entry['name']!r} failed its integrity check")
        arr, end = decode_ntsr(rec)
        if end != len(rec) or list(arr.shape) != entry["shape"]:
            raise IntegrityError(f"{path}: tensor {entry['name']!r} record disagrees with manifest")
        tensors[entry["name"]] = arr
    return manifest, tensors
