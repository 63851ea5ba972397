"""Binary tensor file format (HSTN).

Layout, all integers little-endian:

    magic    4 bytes  b"HSTN"
    version  u32      1
    dtype    u8       0 = float32, 1 = float64
    rank     u32
    extents  rank * u64
    payload  row-major scalars, little-endian

The payload is the C-order flattening of the array, so a write/read
round-trip is bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadMagicError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)

MAGIC = b"HSTN"
VERSION = 1

_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_FIXED_HEADER = struct.Struct("<4sIBI")


def write_tensor(arr: np.ndarray, path) -> None:
    """Write ``arr`` to ``path`` in the HSTN format."""
    arr = np.asarray(arr)
    if arr.ndim < 1 or any(e < 1 for e in arr.shape):
        raise ShapeError(f"tensor must have rank >= 1 and positive extents, got {arr.shape}")
    if arr.dtype not in _CODE_BY_KIND:
        raise UnsupportedDtypeError(f"only float32/float64 tensors are storable, got {arr.dtype}")
    code = _CODE_BY_KIND[arr.dtype]
    header = _FIXED_HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    extents = np.asarray(arr.shape, dtype="<u8").tobytes()
    payload = np.ascontiguousarray(arr).astype(_DTYPE_BY_CODE[code], copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(extents)
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    """Read an HSTN file back into an array, bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FIXED_HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than fixed header")
    magic, version, code, rank = _FIXED_HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_BY_CODE:
        raise UnsupportedDtypeError(f"{path}: unknown dtype code {code}")
    if rank < 1:
        raise ShapeError(f"{path}: rank must be >= 1, got {rank}")
    offset = _FIXED_HEADER.size
    if len(raw) < offset + 8 * rank:
        raise TruncatedPayloadError(f"{path}: file ends inside the extents table")
    extents = np.frombuffer(raw, dtype="<u8", count=rank, offset=offset)
    if any(int(e) < 1 for e in extents):
        raise ShapeError(f"{path}: non-positive extent in {tuple(int(e) for e in extents)}")
    offset += 8 * rank
    dtype = _DTYPE_BY_CODE[code]
    count = int(np.prod(extents, dtype=np.uint64))
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} bytes (header + {count} scalars), got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(tuple(int(e) for e in extents)).copy()
