"""Tensor blob files: a fixed ``TBLB`` header followed by u64 extents and the raw payload."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"TBLB"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sBBB4x")


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise FormatError(f"unsupported blob dtype {arr.dtype}")
    head = _HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[dt], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated blob header")
    magic, version, code, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad blob magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported blob version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    if len(buf) < off + 8 * rank:
        raise FormatError("truncated blob extents")
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dt = _CODE_DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != off + count * dt.itemsize:
        raise FormatError(f"blob payload is {len(buf) - off} bytes, expected {count * dt.itemsize}")
    return np.frombuffer(buf, dtype=dt, offset=off, count=count).reshape(dims).copy()


def save(arr: np.ndarray, path) -> None:
    Path(path).write_bytes(encode(arr))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
