"""Orthonormal image transforms: 2x2 Haar DWT, whole-plane DCT-II, and
space-to-depth pixel shuffling.

All three are linear and orthonormal (s2d/d2s is a permutation), so each
backward pass is simply the corresponding inverse transform applied to the
incoming gradient.  Every function accepts either plain numpy arrays or
autodiff ``Var`` handles and returns the matching kind.

Sub-band order is fixed and named: (ll, lh, hl, hh).  With quadrant samples
a = x[2i, 2j], b = x[2i, 2j+1], c = x[2i+1, 2j], d = x[2i+1, 2j+1]:

    ll = (a + b + c + d) / 2      lh = (a + b - c - d) / 2
    hl = (a - b + c - d) / 2      hh = (a - b - c + d) / 2

which is the stride-2 correlation with the four orthonormal Haar kernels.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .autodiff import Var, as_var, tape_of, value_of


class SubBands(NamedTuple):
    """One level of 2-D Haar analysis; each field is (n, c, h/2, w/2)."""

    ll: object
    lh: object
    hl: object
    hh: object


def _check_even(h: int, w: int, op: str) -> None:
    if h % 2 or w % 2:
        raise ValueError(f"{op}: spatial dims must be even, got {h}x{w}")


# ---------------------------------------------------------------------------
# Haar


def _dwt2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def _idwt2(ll, lh, hl, hh) -> np.ndarray:
    n, c, h2, w2 = ll.shape
    out = np.empty((n, c, h2 * 2, w2 * 2))
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[:, :, 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    out[:, :, 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def dwt2_haar(x) -> SubBands:
    """One level of orthonormal Haar analysis; h and w must be even."""
    xd = value_of(x)
    _check_even(xd.shape[2], xd.shape[3], "dwt2_haar")
    bands = _dwt2(xd)
    if not isinstance(x, Var):
        return SubBands(*bands)
    tape = x.tape
    out = []
    for i, band in enumerate(bands):
        def backward(g, i=i):
            parts = [np.zeros_like(g)] * 4
            parts[i] = g
            return (_idwt2(*parts),)

        out.append(tape.record(f"dwt2_haar.{SubBands._fields[i]}", band, (x,), backward))
    return SubBands(*out)


def idwt2_haar(sb: SubBands):
    """Exact inverse of dwt2_haar; the four bands must share one shape."""
    datas = [value_of(b) for b in sb]
    for i, d in enumerate(datas[1:], start=1):
        if d.shape != datas[0].shape:
            raise ValueError(
                f"idwt2_haar: band {SubBands._fields[i]} shape {d.shape} "
                f"!= ll shape {datas[0].shape}"
            )
    out = _idwt2(*datas)
    tape = tape_of(*sb)
    if tape is None:
        return out
    bvars = [as_var(tape, b) for b in sb]
    return tape.record("idwt2_haar", out, bvars, lambda g: _dwt2(g))


# ---------------------------------------------------------------------------
# DCT


@lru_cache(maxsize=None)
def _dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: row k is the k-th cosine basis vector."""
    i = np.arange(n)
    k = np.arange(n)[:, None]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


def _dct2(x: np.ndarray) -> np.ndarray:
    ch = _dct_matrix(x.shape[2])
    cw = _dct_matrix(x.shape[3])
    return ch @ x @ cw.T


def _idct2(x: np.ndarray) -> np.ndarray:
    ch = _dct_matrix(x.shape[2])
    cw = _dct_matrix(x.shape[3])
    return ch.T @ x @ cw


def dct2(x):
    """Orthonormal whole-plane 2-D DCT-II, per sample and channel."""
    xd = value_of(x)
    out = _dct2(xd)
    if not isinstance(x, Var):
        return out
    return x.tape.record("dct2", out, (x,), lambda g: (_idct2(g),))


def idct2(x):
    xd = value_of(x)
    out = _idct2(xd)
    if not isinstance(x, Var):
        return out
    return x.tape.record("idct2", out, (x,), lambda g: (_dct2(g),))


# ---------------------------------------------------------------------------
# space-to-depth


def _s2d(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    x = x.reshape(n, c, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 2, 4)  # (n, c, r, r, h/r, w/r)
    return np.ascontiguousarray(x.reshape(n, c * r * r, h // r, w // r))


def _d2s(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    co = c // (r * r)
    x = x.reshape(n, co, r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)  # (n, co, h, r, w, r)
    return np.ascontiguousarray(x.reshape(n, co, h * r, w * r))


def space_to_depth(x, r: int = 2):
    """(n, c, h, w) -> (n, c*r^2, h/r, w/r).

    Output channel k*r^2 + (i*r + j) holds input channel k at phase (i, j),
    phases in row-major order - for a single-channel RGGB plane the result
    is the channel stack (R, G1, G2, B).
    """
    xd = value_of(x)
    n, c, h, w = xd.shape
    if r < 1:
        raise ValueError(f"space_to_depth: r must be >= 1, got {r}")
    if h % r or w % r:
        raise ValueError(f"space_to_depth: dims {h}x{w} not divisible by r={r}")
    out = _s2d(xd, r)
    if not isinstance(x, Var):
        return out
    return x.tape.record("space_to_depth", out, (x,), lambda g: (_d2s(g, r),))


def depth_to_space(x, r: int = 2):
    """Exact inverse of space_to_depth; channels must be divisible by r^2."""
    xd = value_of(x)
    if r < 1:
        raise ValueError(f"depth_to_space: r must be >= 1, got {r}")
    if xd.shape[1] % (r * r):
        raise ValueError(
            f"depth_to_space: {xd.shape[1]} channels not divisible by r^2={r * r}"
        )
    out = _d2s(xd, r)
    if not isinstance(x, Var):
        return out
    return x.tape.record("depth_to_space", out, (x,), lambda g: (_s2d(g, r),))
