"""Dense 4-D image tensors and the SBT1 tensor file format.

Every array that crosses a module boundary in this package is a numpy
float64 array laid out ``(n, c, h, w)``, C-contiguous, w fastest.  The
helpers here are the single home for shape plumbing: channel concat/split,
zero padding, and a tiny binary serialization format.

SBT1 layout (little-endian throughout)::

    bytes 0..3    magic b"SBT1"
    bytes 4..19   four uint32: n, c, h, w
    byte  20      dtype tag: 0 = float64, 1 = float32
    bytes 21..    n*c*h*w raw values, row-major

Loading always returns float64 (the whole package computes in 64-bit); the
float32 tag exists so exports can be written compactly.
"""

from __future__ import annotations

import struct
from typing import NamedTuple, Sequence

import numpy as np

MAGIC = b"SBT1"
_DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_TAG_OF = {"f64": 0, "f32": 1}


class Shape(NamedTuple):
    n: int
    c: int
    h: int
    w: int


def as_nchw(data, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 (n, c, h, w) array or raise ValueError."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4-D (n, c, h, w), got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


def shape_of(t: np.ndarray) -> Shape:
    return Shape(*t.shape)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate along the channel axis.

    All parts must share n, h, w; a mismatch is reported with the offending
    part index.  Channel order follows the input order.
    """
    if len(parts) == 0:
        raise ValueError("concat_channels: need at least one part")
    ref = parts[0]
    for i, p in enumerate(parts):
        if p.ndim != 4:
            raise ValueError(f"concat_channels: part {i} is not 4-D")
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
            raise ValueError(
                f"concat_channels: part {i} has shape {p.shape}, "
                f"incompatible with part 0 shape {ref.shape}"
            )
    if len(parts) == 1:
        return np.array(parts[0], copy=True)
    return np.concatenate(parts, axis=1)


def split_channels(t: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Inverse of concat_channels; sizes must sum to t's channel count."""
    total = int(sum(sizes))
    if total != t.shape[1]:
        raise ValueError(
            f"split_channels: sizes sum to {total} but tensor has {t.shape[1]} channels"
        )
    if any(s <= 0 for s in sizes):
        raise ValueError("split_channels: sizes must be positive")
    out = []
    at = 0
    for s in sizes:
        out.append(np.array(t[:, at : at + s], copy=True))
        at += s
    return out


def pad_spatial(t: np.ndarray, pad: int, mode: str = "zero") -> np.ndarray:
    """Zero-pad h and w symmetrically by ``pad`` on each side."""
    if pad < 0:
        raise ValueError(f"pad_spatial: pad must be >= 0, got {pad}")
    if mode != "zero":
        raise ValueError(f"pad_spatial: unsupported mode {mode!r}")
    if pad == 0:
        return np.array(t, copy=True)
    return np.pad(t, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def save_sbt(path, arr: np.ndarray, dtype: str = "f64") -> None:
    """Write one tensor as an SBT1 file (see module docstring for layout)."""
    arr = as_nchw(arr)
    if dtype not in _TAG_OF:
        raise ValueError(f"save_sbt: dtype must be 'f64' or 'f32', got {dtype!r}")
    tag = _TAG_OF[dtype]
    with open(path, "wb") as fh:
        fh.write(sbt_bytes(arr, tag))


def sbt_bytes(arr: np.ndarray, tag: int = 0) -> bytes:
    header = MAGIC + struct.pack("<4I", *arr.shape) + struct.pack("B", tag)
    return header + np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes()


def load_sbt(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    arr, used = sbt_from_bytes(data)
    if used != len(data):
        raise ValueError(f"load_sbt: {len(data) - used} trailing bytes in {path}")
    return arr


def sbt_from_bytes(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one SBT1 record starting at ``offset``; return (array, next offset)."""
    if data[offset : offset + 4] != MAGIC:
        raise ValueError("sbt: bad magic, not an SBT1 record")
    n, c, h, w = struct.unpack_from("<4I", data, offset + 4)
    tag = data[offset + 20]
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"sbt: unknown dtype tag {tag}")
    dt = _DTYPE_TAGS[tag]
    count = n * c * h * w
    start = offset + 21
    end = start + count * dt.itemsize
    if end > len(data):
        raise ValueError("sbt: truncated record")
    flat = np.frombuffer(data, dtype=dt, count=count, offset=start)
    arr = flat.reshape(n, c, h, w).astype(np.float64)
    return arr, end
