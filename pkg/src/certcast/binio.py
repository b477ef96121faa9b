"""Flat little-endian float64 array container used for parameters and dataset caches.

Layout: 16-byte magic, uint64 array count, then per array a uint64 rank,
uint64 dims and the '<f8' payload in C order.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CERTCAST-F64-v1\n"
assert len(MAGIC) == 16


def dumps(arrays) -> bytes:
    parts = [MAGIC, struct.pack("<Q", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        parts.append(struct.pack("<Q", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> list[np.ndarray]:
    if buf[:16] != MAGIC:
        raise ValueError("bad magic header")
    pos = 16
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        if pos + 8 * n > len(buf):
            raise ValueError("truncated array payload")
        out.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64))
        pos += 8 * n
    if pos != len(buf):
        raise ValueError("trailing bytes after last array")
    return out


def save(path, arrays) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(list(arrays)))


def load(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
