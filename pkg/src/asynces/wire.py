"""Shared little-endian binary layouts.

Flat vector record: u32 element count followed by that many float32 values.
Used both for distribution snapshots on disk and for parameter payloads on
the worker protocol, so the two never drift apart.
"""

import struct

import numpy as np

U32 = struct.Struct("<I")
F32 = struct.Struct("<f")


def pack_vec(values) -> bytes:
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 1:
        raise ValueError("expected a flat vector, got shape %r" % (arr.shape,))
    return U32.pack(arr.size) + arr.tobytes()


def unpack_vec(buf: bytes, offset: int = 0):
    """Read one vector record; returns (float32 array, next offset)."""
    if len(buf) - offset < 4:
        raise ValueError("buffer too short for vector header")
    (n,) = U32.unpack_from(buf, offset)
    end = offset + 4 + 4 * n
    if len(buf) < end:
        raise ValueError("buffer too short for %d-element vector" % n)
    arr = np.frombuffer(buf, dtype="<f4", count=n, offset=offset + 4).copy()
    return arr, end
