"""Binary tensor container: header plus row-major payload, little-endian.

Layout: magic ``HSTN``, version (u32, currently 1), dtype code (u8: 0 for
real32, 1 for real64), rank (u32), one u64 extent per axis, then the
row-major element payload. Deliberately reimplemented here so the exporter
and its consumer share only the bytes on disk, never code.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import TensorFormatError

MAGIC = b"HSTN"
VERSION = 1
_HEADER = struct.Struct("<4sIBI")
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(arr: np.ndarray, path: str) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}, need real32/real64")
    if arr.ndim == 0 or any(d <= 0 for d in arr.shape):
        raise TensorFormatError(f"need positive extents, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, _DTYPE_CODES[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header")
    magic, version, code, rank = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    offset = _HEADER.size + 8 * rank
    if len(raw) < offset:
        raise TensorFormatError(f"{path}: truncated extent list")
    shape = struct.unpack_from(f"<{rank}Q", raw, _HEADER.size)
    dtype = _CODE_DTYPES[code]
    expected = offset + dtype.itemsize * int(np.prod(shape))
    if len(raw) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected - offset}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(shape).copy()
