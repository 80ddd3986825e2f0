"""Reverse-mode automatic differentiation over an append-only tape.

Design notes
------------
A ``Tape`` records one forward computation as a flat list of ``Node`` entries.
Node ids are assigned in creation order, so the list itself is a topological
order and the backward pass is a single reverse iteration - no graph search,
no recursion, deterministic gradient accumulation order.

``Var`` is a thin handle (tape, id, value).  Ops in this module dispatch on
their arguments: if no argument is a Var they compute plain numpy forward
values and never touch a tape, so the same block/model code serves both
inference (arrays in, arrays out) and training (Vars in, Vars out).  Mixed
calls lift array arguments onto the tape as non-trainable leaves.

Gradients follow the value layout exactly (a parameter of shape s gets a
gradient of shape s).  Subgradient conventions are fixed: relu'(0) = 0 and
d|u|/du = 0 at u = 0.  ``Tape.backward`` returns gradients for every
trainable leaf, zeros included, so parameters that do not reach the loss
still get well-defined updates.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import concat_channels as _np_concat


class Node:
    __slots__ = ("op", "input_ids", "backward_fn")

    def __init__(self, op: str, input_ids: tuple[int, ...], backward_fn):
        self.op = op
        self.input_ids = input_ids
        self.backward_fn = backward_fn


class Var:
    """Handle to one tape entry; ``data`` is the forward value (numpy array)."""

    __slots__ = ("tape", "id", "data")

    def __init__(self, tape: "Tape", id: int, data: np.ndarray):
        self.tape = tape
        self.id = id
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.data.shape})"


class Tape:
    """Append-only record of a forward pass.

    ``param`` marks a leaf as trainable; ``backward`` seeds a scalar loss
    with 1 and returns a dict mapping every trainable leaf id to its
    gradient (zero arrays for leaves the loss does not depend on).
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._values: list[np.ndarray] = []
        self.trainable_ids: list[int] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, trainable: bool = False) -> Var:
        data = np.asarray(data, dtype=np.float64)
        vid = len(self.nodes)
        self.nodes.append(Node("leaf", (), None))
        self._values.append(data)
        if trainable:
            self.trainable_ids.append(vid)
        return Var(self, vid, data)

    def param(self, data) -> Var:
        return self.leaf(data, trainable=True)

    def record(self, op: str, data: np.ndarray, inputs: Sequence[Var], backward_fn) -> Var:
        """Append an interior node.

        ``backward_fn(gout)`` must return one gradient per input, aligned
        with ``inputs`` (None allowed for inputs that need no gradient).
        """
        for v in inputs:
            if v.tape is not self:
                raise ValueError(f"op {op!r}: inputs belong to different tapes")
        vid = len(self.nodes)
        self.nodes.append(Node(op, tuple(v.id for v in inputs), backward_fn))
        self._values.append(data)
        return Var(self, vid, data)

    def backward(self, loss: Var) -> dict[int, np.ndarray]:
        if loss.tape is not self:
            raise ValueError("backward: loss was recorded on a different tape")
        if loss.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
        for vid in range(loss.id, -1, -1):
            g = grads.get(vid)
            if g is None:
                continue
            node = self.nodes[vid]
            if node.backward_fn is None:
                continue
            input_grads = node.backward_fn(g)
            for iid, ig in zip(node.input_ids, input_grads):
                if ig is None:
                    continue
                acc = grads.get(iid)
                grads[iid] = ig if acc is None else acc + ig
        out = {}
        for pid in self.trainable_ids:
            g = grads.get(pid)
            out[pid] = g if g is not None else np.zeros_like(self._values[pid])
        return out


def tape_of(*vals) -> Tape | None:
    """Tape shared by any Var arguments, or None if all are plain arrays."""
    tape = None
    for v in vals:
        if isinstance(v, Var):
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise ValueError("mixed tapes in one op")
    return tape


def as_var(tape: Tape, v) -> Var:
    """Lift a plain array onto the tape as a constant leaf; Vars pass through."""
    if isinstance(v, Var):
        return v
    return tape.leaf(np.asarray(v, dtype=np.float64))


def value_of(v) -> np.ndarray:
    return v.data if isinstance(v, Var) else np.asarray(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(x, y):
    tape = tape_of(x, y)
    xd, yd = value_of(x), value_of(y)
    _check_same_shape("add", xd, yd)
    if tape is None:
        return xd + yd
    xv, yv = as_var(tape, x), as_var(tape, y)
    return tape.record("add", xd + yd, (xv, yv), lambda g: (g, g))


def sub(x, y):
    tape = tape_of(x, y)
    xd, yd = value_of(x), value_of(y)
    _check_same_shape("sub", xd, yd)
    if tape is None:
        return xd - yd
    xv, yv = as_var(tape, x), as_var(tape, y)
    return tape.record("sub", xd - yd, (xv, yv), lambda g: (g, -g))


def mul(x, y):
    tape = tape_of(x, y)
    xd, yd = value_of(x), value_of(y)
    _check_same_shape("mul", xd, yd)
    if tape is None:
        return xd * yd
    xv, yv = as_var(tape, x), as_var(tape, y)
    return tape.record("mul", xd * yd, (xv, yv), lambda g: (g * yd, g * xd))


def scale(x, s: float):
    s = float(s)
    if not isinstance(x, Var):
        return value_of(x) * s
    return x.tape.record("scale", x.data * s, (x,), lambda g: (g * s,))


def relu(x):
    xd = value_of(x)
    if not isinstance(x, Var):
        return np.maximum(xd, 0.0)
    mask = xd > 0.0  # strict: subgradient at 0 is 0
    return x.tape.record("relu", xd * mask, (x,), lambda g: (g * mask,))


def sum_all(x):
    """Sum every element down to a (1, 1, 1, 1) scalar tensor."""
    xd = value_of(x)
    out = np.array(xd.sum(), dtype=np.float64).reshape(1, 1, 1, 1)
    if not isinstance(x, Var):
        return out
    shape = xd.shape
    return x.tape.record(
        "sum_all", out, (x,), lambda g: (np.full(shape, g.ravel()[0]),)
    )


def concat_channels(parts: Sequence):
    tape = tape_of(*parts)
    datas = [value_of(p) for p in parts]
    out = _np_concat(datas)
    if tape is None:
        return out
    pvars = [as_var(tape, p) for p in parts]
    sizes = [d.shape[1] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(sizes)))

    return tape.record("concat_channels", out, pvars, backward)


def slice_channels(x, start: int, stop: int):
    xd = value_of(x)
    if not (0 <= start < stop <= xd.shape[1]):
        raise ValueError(
            f"slice_channels: [{start}:{stop}] out of range for {xd.shape[1]} channels"
        )
    out = np.ascontiguousarray(xd[:, start:stop])
    if not isinstance(x, Var):
        return out
    shape = xd.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[:, start:stop] = g
        return (gx,)

    return x.tape.record("slice_channels", out, (x,), backward)


def split_channels(x, sizes: Sequence[int]) -> list:
    xd = value_of(x)
    if int(sum(sizes)) != xd.shape[1]:
        raise ValueError(
            f"split_channels: sizes sum to {sum(sizes)} but tensor has {xd.shape[1]} channels"
        )
    out = []
    at = 0
    for s in sizes:
        out.append(slice_channels(x, at, at + s))
        at += s
    return out


# ---------------------------------------------------------------------------
# convolution


def _conv_geometry(x_shape, w_shape, stride: int, pad: int):
    n, c, h, w = x_shape
    co, ci, kh, kw = w_shape
    if c != ci:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {ci}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: bad stride/pad ({stride}, {pad})")
    oh_num = h + 2 * pad - kh
    ow_num = w + 2 * pad - kw
    if oh_num < 0 or ow_num < 0:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    if oh_num % stride or ow_num % stride:
        raise ValueError(
            f"conv2d: output size not integral for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )
    return oh_num // stride + 1, ow_num // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(n, c, hp, wp) -> (n, c*kh*kw, oh*ow) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, oh, ow, kh, kw)
    n, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def _conv2d_forward(xd, wd, bd, stride, pad):
    n = xd.shape[0]
    co, ci, kh, kw = wd.shape
    oh, ow = _conv_geometry(xd.shape, wd.shape, stride, pad)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    cols = _im2col(xp, kh, kw, stride)
    w2 = wd.reshape(co, ci * kh * kw)
    out = w2 @ cols  # (co, K) @ (n, K, L) -> (n, co, L)
    out += bd.reshape(1, co, 1)
    return out.reshape(n, co, oh, ow), cols, xp.shape


def conv2d(x, w, b, stride: int = 1, pad: int = 0):
    """2-D cross-correlation with bias.

    x: (n, ci, h, w), w: (co, ci, kh, kw), b: (co,).  Output spatial size is
    (h + 2*pad - kh)/stride + 1 per side; non-integral sizes are rejected.
    """
    tape = tape_of(x, w, b)
    xd, wd, bd = value_of(x), value_of(w), value_of(b)
    if bd.shape != (wd.shape[0],):
        raise ValueError(f"conv2d: bias shape {bd.shape} != ({wd.shape[0]},)")
    out, cols, xp_shape = _conv2d_forward(xd, wd, bd, stride, pad)
    if tape is None:
        return out
    xv, wv, bv = as_var(tape, x), as_var(tape, w), as_var(tape, b)
    n, _, oh, ow = out.shape
    co, ci, kh, kw = wd.shape
    w2 = wd.reshape(co, ci * kh * kw)

    def backward(g):
        g2 = g.reshape(n, co, oh * ow)
        gb = g2.sum(axis=(0, 2))
        gw = np.tensordot(g2, cols, axes=((0, 2), (0, 2))).reshape(wd.shape)
        gcols = (w2.T @ g2).reshape(n, ci, kh, kw, oh, ow)
        gxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[
                    :, :, i, j
                ]
        gx = gxp[:, :, pad : xp_shape[2] - pad, pad : xp_shape[3] - pad] if pad else gxp
        return gx, gw, gb

    return tape.record("conv2d", out, (xv, wv, bv), backward)


# ---------------------------------------------------------------------------
# gradient checking


def scalar_value(v) -> float:
    """Extract the scalar payload of a loss value (Var, array, or float)."""
    if isinstance(v, Var):
        v = v.data
    arr = np.asarray(v, dtype=np.float64)
    if arr.size != 1:
        raise ValueError(f"expected a scalar, got shape {arr.shape}")
    return float(arr.ravel()[0])


def finite_diff_check(
    f: Callable[[dict], object], params: dict[str, np.ndarray], eps: float = 1e-6
) -> float:
    """Worst-case relative error between tape gradients and central differences.

    ``f`` maps a dict of named values to a scalar; it is called once with
    Vars (analytic path) and repeatedly with plain arrays (numeric path).
    Error metric per entry: |analytic - numeric| / max(1, |numeric|).
    """
    tape = Tape()
    bound = {k: tape.param(v) for k, v in params.items()}
    loss = f(bound)
    if not isinstance(loss, Var):
        raise ValueError("finite_diff_check: f must return a Var when given Vars")
    grads_by_id = tape.backward(loss)
    analytic = {k: grads_by_id[bound[k].id] for k in params}

    worst = 0.0
    for name, base in params.items():
        work = {k: np.array(v, copy=True) for k, v in params.items()}
        arr = work[name]
        flat = arr.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = scalar_value(f(work))
            flat[i] = orig - eps
            lo = scalar_value(f(work))
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            err = abs(ana[i] - num) / max(1.0, abs(num))
            if err > worst:
                worst = err
    return worst
