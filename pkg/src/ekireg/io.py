"""Dense array containers: a small binary format and CSV.

Binary layout (all little-endian)::

    magic   8 bytes   b"EKIMAT\\x00\\x01"
    ndim    uint32
    dims    ndim x uint64
    data    prod(dims) x float64, row-major
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"EKIMAT\x00\x01"


def save_binary(path, array) -> None:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack("<%dQ" % a.ndim, *a.shape))
        fh.write(a.tobytes(order="C"))


def load_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a matrix container")
        (ndim,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack("<%dQ" % ndim, fh.read(8 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(dims).astype(float)


def save_csv(path, array) -> None:
    """Write a 1-D or 2-D array as CSV with round-trip precision."""
    a = np.asarray(array, dtype=float)
    if a.ndim > 2:
        raise ValueError("CSV export supports 1-D and 2-D arrays only")
    np.savetxt(path, np.atleast_2d(a) if a.ndim == 2 else a[None, :],
               delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
