"""Named finite-difference gradient checks for every differentiable piece.

Each check builds a scalar loss (a fixed random weighting of the op output,
so permuted or dropped elements cannot cancel), runs the tape backward, and
compares against central differences via ``finite_diff_check``.  Relative
error ≤ tol passes.  Probe points avoid kinks: relu inputs keep |x| >= 0.1
and the top-k check verifies a clear margin at the selection threshold.

Tolerances: 1e-8 for purely linear ops (FD is exact up to rounding), 1e-6
for conv/relu, 1e-5 for deep composites (blocks, model, losses).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import blocks as bk
from . import loss as ls
from . import transforms as tf
from .autodiff import finite_diff_check
from .model import ModelConfig, init_params, model_forward

_LINEAR_TOL = 1e-8
_SIMPLE_TOL = 1e-6
_DEEP_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _weighted(out, wconst: np.ndarray):
    """Scalar readout sum(out * wconst); works for Vars and arrays."""
    return ad.sum_all(ad.mul(out, wconst))


def _params_of(struct) -> dict[str, np.ndarray]:
    return dict(struct.named("p"))


def _rebind(struct, values: dict, prefix: str = "p"):
    """Rebuild a parameter structure with leaves taken from ``values``."""
    names = iter([n for n, _ in struct.named(prefix)])
    return struct.map(lambda _arr: values[next(names)])


def check_conv2d(eps: float) -> CheckResult:
    rng = np.random.default_rng(101)
    x = rng.normal(0.0, 1.0, (2, 3, 6, 7))
    w = rng.normal(0.0, 0.5, (4, 3, 3, 3))
    b = rng.normal(0.0, 0.5, 4)
    wout = rng.normal(0.0, 1.0, (2, 4, 6, 7))
    err = finite_diff_check(
        lambda p: _weighted(ad.conv2d(p["x"], p["w"], p["b"], pad=1), wout),
        {"x": x, "w": w, "b": b},
        eps,
    )
    return CheckResult("conv2d", err, _SIMPLE_TOL)


def check_conv2d_strided(eps: float) -> CheckResult:
    rng = np.random.default_rng(102)
    x = rng.normal(0.0, 1.0, (1, 2, 9, 9))
    w = rng.normal(0.0, 0.5, (3, 2, 3, 3))
    b = rng.normal(0.0, 0.5, 3)
    wout = rng.normal(0.0, 1.0, (1, 3, 4, 4))
    err = finite_diff_check(
        lambda p: _weighted(ad.conv2d(p["x"], p["w"], p["b"], stride=2), wout),
        {"x": x, "w": w, "b": b},
        eps,
    )
    return CheckResult("conv2d_stride2", err, _SIMPLE_TOL)


def check_relu(eps: float) -> CheckResult:
    rng = np.random.default_rng(103)
    mag = rng.uniform(0.1 + 10 * eps, 1.0, (2, 3, 5, 5))  # keep clear of the kink
    x = mag * rng.choice([-1.0, 1.0], mag.shape)
    wout = rng.normal(0.0, 1.0, x.shape)
    err = finite_diff_check(lambda p: _weighted(ad.relu(p["x"]), wout), {"x": x}, eps)
    return CheckResult("relu", err, _SIMPLE_TOL)


def _linear_check(name: str, fn: Callable, shape: tuple, seed: int, eps: float,
                  out_shape: tuple | None = None) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, shape)
    wout = rng.normal(0.0, 1.0, out_shape if out_shape else shape)
    err = finite_diff_check(lambda p: _weighted(fn(p["x"]), wout), {"x": x}, eps)
    return CheckResult(name, err, _LINEAR_TOL)


def check_dwt2(eps: float) -> CheckResult:
    rng = np.random.default_rng(104)
    x = rng.normal(0.0, 1.0, (1, 2, 6, 6))
    wouts = [rng.normal(0.0, 1.0, (1, 2, 3, 3)) for _ in range(4)]

    def f(p):
        bands = tf.dwt2_haar(p["x"])
        terms = [_weighted(band, w) for band, w in zip(bands, wouts)]
        return ad.add(ad.add(terms[0], terms[1]), ad.add(terms[2], terms[3]))

    return CheckResult("dwt2_haar", finite_diff_check(f, {"x": x}, eps), _LINEAR_TOL)


def check_idwt2(eps: float) -> CheckResult:
    rng = np.random.default_rng(105)
    bands = {k: rng.normal(0.0, 1.0, (1, 2, 3, 3)) for k in tf.SubBands._fields}
    wout = rng.normal(0.0, 1.0, (1, 2, 6, 6))

    def f(p):
        return _weighted(tf.idwt2_haar(tf.SubBands(p["ll"], p["lh"], p["hl"], p["hh"])), wout)

    return CheckResult("idwt2_haar", finite_diff_check(f, bands, eps), _LINEAR_TOL)


def check_concat_split(eps: float) -> CheckResult:
    rng = np.random.default_rng(106)
    a = rng.normal(0.0, 1.0, (1, 2, 4, 4))
    b = rng.normal(0.0, 1.0, (1, 3, 4, 4))
    w1 = rng.normal(0.0, 1.0, (1, 4, 4, 4))
    w2 = rng.normal(0.0, 1.0, (1, 1, 4, 4))

    def f(p):
        cat = ad.concat_channels([p["a"], p["b"]])
        lo, hi = ad.split_channels(cat, [4, 1])
        return ad.add(_weighted(lo, w1), _weighted(hi, w2))

    return CheckResult("concat_split", finite_diff_check(f, {"a": a, "b": b}, eps),
                       _LINEAR_TOL)


def check_dense_block(eps: float) -> CheckResult:
    rng = np.random.default_rng(107)
    p = bk.DenseBlockParams.create(rng, c_in=4, growth=4, n_layers=2)
    x = rng.normal(0.0, 1.0, (1, 4, 8, 8))
    wout = rng.normal(0.0, 1.0, (1, p.c_out, 8, 8))
    params = {"x": x, **_params_of(p)}

    def f(vals):
        return _weighted(bk.dense_block_forward(vals["x"], _rebind(p, vals)), wout)

    return CheckResult("dense_block", finite_diff_check(f, params, eps), _DEEP_TOL)


def _bottleneck_check(kind: str, seed: int, eps: float) -> CheckResult:
    rng = np.random.default_rng(seed)
    p = bk.BottleneckParams.create(rng, kind, channels=8)
    x = rng.normal(0.0, 1.0, (1, 8, 8, 8))
    wout = rng.normal(0.0, 1.0, x.shape)
    params = {"x": x, **_params_of(p)}

    def f(vals):
        return _weighted(bk.bottleneck_forward(vals["x"], _rebind(p, vals)), wout)

    return CheckResult(f"bottleneck_{kind}", finite_diff_check(f, params, eps), _DEEP_TOL)


def check_model(eps: float) -> CheckResult:
    # narrow width: the per-kind bottleneck checks above already probe the
    # blocks at full depth, this one covers head/tail/skip composition
    rng = np.random.default_rng(111)
    m = init_params(ModelConfig(kind="sdwt", blocks=1, filters=4, seed=5))
    # the residual conv initializes to zero, which would hide upstream
    # gradients from the probe; give it generic values
    m.tail_out.w[...] = rng.normal(0.0, 0.2, m.tail_out.w.shape)
    m.tail_out.b[...] = rng.normal(0.0, 0.05, m.tail_out.b.shape)
    x = rng.normal(0.0, 1.0, (1, 4, 8, 8))
    wout = rng.normal(0.0, 1.0, x.shape)
    params = {"x": x, **dict(m.named())}

    def f(vals):
        names = iter([n for n, _ in m.named()])
        mv = m.map(lambda _arr: vals[next(names)])
        return _weighted(model_forward(mv, vals["x"]), wout)

    return CheckResult("model", finite_diff_check(f, params, eps), _DEEP_TOL)


def check_l1(eps: float) -> CheckResult:
    rng = np.random.default_rng(112)
    pred = rng.normal(0.0, 1.0, (2, 2, 4, 4))
    gt = pred + rng.choice([-1.0, 1.0], pred.shape) * rng.uniform(0.2, 1.0, pred.shape)
    err = finite_diff_check(lambda p: ls.l1_loss(p["pred"], p["gt"]),
                            {"pred": pred, "gt": gt}, eps)
    return CheckResult("l1_loss", err, _SIMPLE_TOL)


def check_topk(eps: float, k: float = 30.0) -> CheckResult:
    rng = np.random.default_rng(113)
    pred = rng.normal(0.0, 1.0, (2, 1, 6, 6))
    gt = rng.normal(0.0, 1.0, pred.shape)
    # selection must not flip under +-eps probes: demand a clear margin
    err_mat = np.abs(tf.dct2(gt) - tf.dct2(pred))
    m = ls.topk_count(k, err_mat[0].size)
    for s in range(err_mat.shape[0]):
        vals = np.sort(err_mat[s].ravel())[::-1]
        margin = vals[m - 1] - vals[m]
        if margin < 1e-3:
            raise AssertionError(f"top-k probe point lacks threshold margin ({margin})")
    err = finite_diff_check(lambda p: ls.topk_dct_loss(p["pred"], p["gt"], k),
                            {"pred": pred, "gt": gt}, eps)
    return CheckResult("topk_dct_loss", err, _DEEP_TOL)


def run_checks(only=None, eps: float = 1e-6) -> list[CheckResult]:
    """Run all (or a named subset of) gradient checks."""
    table: list[tuple[str, Callable[[float], CheckResult]]] = [
        ("conv2d", check_conv2d),
        ("conv2d_stride2", check_conv2d_strided),
        ("relu", check_relu),
        ("dwt2_haar", check_dwt2),
        ("idwt2_haar", check_idwt2),
        ("dct2", lambda e: _linear_check("dct2", tf.dct2, (1, 2, 6, 5), 108, e)),
        ("idct2", lambda e: _linear_check("idct2", tf.idct2, (1, 2, 6, 5), 109, e)),
        ("space_to_depth", lambda e: _linear_check(
            "space_to_depth", lambda x: tf.space_to_depth(x, 2), (1, 2, 6, 6), 110, e,
            out_shape=(1, 8, 3, 3))),
        ("depth_to_space", lambda e: _linear_check(
            "depth_to_space", lambda x: tf.depth_to_space(x, 2), (1, 8, 3, 3), 114, e,
            out_shape=(1, 2, 6, 6))),
        ("concat_split", check_concat_split),
        ("dense_block", check_dense_block),
        ("bottleneck_sdwt", lambda e: _bottleneck_check("sdwt", 115, e)),
        ("bottleneck_dwt", lambda e: _bottleneck_check("dwt", 116, e)),
        ("bottleneck_nodwt", lambda e: _bottleneck_check("nodwt", 117, e)),
        ("model", check_model),
        ("l1_loss", check_l1),
        ("topk_dct_loss", check_topk),
    ]
    if only:
        wanted = set(only)
        unknown = wanted - {name for name, _ in table}
        if unknown:
            raise ValueError(f"unknown gradcheck names: {sorted(unknown)}")
        table = [(n, f) for n, f in table if n in wanted]
    return [fn(eps) for _, fn in table]
