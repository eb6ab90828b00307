"""Feature-cache binary format.

Little-endian layout::

    b"TSTK" | version: u32 | kind: u8 | dims: 3 x u32 | payload: f32, row-major

Arrays with fewer than three axes are stored with leading unit dimensions.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "KIND_CODES",
    "CacheFormatError",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
    "write_lines",
    "read_lines",
    "sha256_bytes",
]

MAGIC = b"TSTK"
VERSION = 1
_HEADER = struct.Struct("<4sIB3I")

KIND_CODES = {
    "log_mel": 1,
    "mfcc": 2,
    "stats": 3,
    "meta": 4,
    "probs": 5,
}
_KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class CacheFormatError(ValueError):
    pass


def tensor_to_bytes(array, kind: str) -> bytes:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim > 3:
        raise ValueError("cache tensors have at most three axes")
    dims = (1,) * (3 - a.ndim) + a.shape
    return _HEADER.pack(MAGIC, VERSION, KIND_CODES[kind], *dims) + a.astype("<f4").tobytes()


def tensor_from_bytes(data: bytes):
    """Return ``(kind, array)``; the array is float64 with three axes."""
    if len(data) < _HEADER.size:
        raise CacheFormatError("truncated cache header")
    magic, version, code, *dims = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CacheFormatError("bad magic, not a TSTK file")
    if version != VERSION:
        raise CacheFormatError(f"unsupported TSTK version {version}")
    if code not in _KIND_NAMES:
        raise CacheFormatError(f"unknown kind byte {code}")
    count = int(np.prod(dims))
    if len(data) != _HEADER.size + 4 * count:
        raise CacheFormatError("payload size does not match header dims")
    a = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return _KIND_NAMES[code], a.astype(np.float64).reshape(dims)


def write_tensor(path, array, kind: str) -> None:
    Path(path).write_bytes(tensor_to_bytes(array, kind))


def read_tensor(path, expect_kind: str = None) -> np.ndarray:
    kind, a = tensor_from_bytes(Path(path).read_bytes())
    if expect_kind is not None and kind != expect_kind:
        raise CacheFormatError(f"{path}: expected kind {expect_kind}, found {kind}")
    return a


def write_lines(path, lines) -> None:
    Path(path).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def read_lines(path) -> list:
    return Path(path).read_text(encoding="utf-8").splitlines()


def sha256_bytes(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.hexdigest()
