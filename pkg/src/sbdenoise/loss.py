"""Training losses: plain L1 and the top-k% DCT frequency loss.

The frequency loss transforms prediction and target with the orthonormal
whole-plane DCT, takes the absolute coefficient error, and averages only
the largest k% of coefficients per sample (selection is per sample, over
all channels of that sample; the batch value is the mean of per-sample
values).  Count m = ceil(k/100 * c*h*w), so any k > 0 keeps at least one
coefficient.  Ties at the threshold resolve to ascending flat index, making
selection deterministic.  Gradients flow only through selected
coefficients, via the DCT adjoint (= inverse, orthonormal).

``k_schedule`` anneals k linearly over epochs: epoch 0 trains on everything
(k_start = 100), later epochs focus on the dominant coefficients down to
k_min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import as_var, scalar_value, tape_of, value_of
from .transforms import _dct2, _idct2

LOSS_KINDS = ("l1", "topk_dct")


@dataclass
class LossSpec:
    kind: str = "l1"
    k_start: float = 100.0
    k_min: float = 10.0
    k_decay_per_epoch: float = 1.0

    def validate(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not (0.0 < self.k_min <= self.k_start <= 100.0):
            raise ValueError(
                f"need 0 < k_min <= k_start <= 100, got k_min={self.k_min}, "
                f"k_start={self.k_start}"
            )
        if self.k_decay_per_epoch < 0.0:
            raise ValueError(f"k_decay_per_epoch must be >= 0, got {self.k_decay_per_epoch}")


def k_schedule(epoch: int, spec: LossSpec) -> float:
    """k percentage used at a 0-based epoch: max(k_min, k_start - decay*epoch)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(spec.k_min, spec.k_start - spec.k_decay_per_epoch * epoch)


def l1_loss(pred, gt):
    """Mean absolute error; float for arrays, scalar Var on a tape.

    Subgradient of |u| at u = 0 is taken as 0.
    """
    tape = tape_of(pred, gt)
    pd, gd = value_of(pred), value_of(gt)
    if pd.shape != gd.shape:
        raise ValueError(f"l1_loss: shape mismatch {pd.shape} vs {gd.shape}")
    diff = pd - gd
    out = float(np.mean(np.abs(diff)))
    if tape is None:
        return out
    pv, gv = as_var(tape, pred), as_var(tape, gt)
    sign = np.sign(diff) / diff.size

    def backward(g):
        g0 = g.ravel()[0]
        return g0 * sign, -g0 * sign

    return tape.record("l1_loss", np.full((1, 1, 1, 1), out), (pv, gv), backward)


def topk_count(k: float, coeffs_per_sample: int) -> int:
    """m = ceil(k/100 * M); k must sit in (0, 100]."""
    if not (0.0 < k <= 100.0):
        raise ValueError(f"k must be in (0, 100], got {k}")
    return math.ceil(k / 100.0 * coeffs_per_sample)


def topk_selection(pred, gt, k: float) -> list[np.ndarray]:
    """Selected flat coefficient indices per sample, largest |DCT error| first.

    Ties resolve to the smaller flat index (stable sort on descending
    magnitude), so the selection is a deterministic function of the inputs.
    """
    pd, gd = value_of(pred), value_of(gt)
    if pd.shape != gd.shape:
        raise ValueError(f"topk_selection: shape mismatch {pd.shape} vs {gd.shape}")
    err = np.abs(_dct2(gd) - _dct2(pd))
    m = topk_count(k, err[0].size)
    picks = []
    for s in range(err.shape[0]):
        flat = err[s].ravel()
        picks.append(np.argsort(-flat, kind="stable")[:m])
    return picks


def topk_dct_loss(pred, gt, k: float):
    """Mean |DCT(gt) - DCT(pred)| over the top-k% coefficients per sample."""
    tape = tape_of(pred, gt)
    pd, gd = value_of(pred), value_of(gt)
    if pd.shape != gd.shape:
        raise ValueError(f"topk_dct_loss: shape mismatch {pd.shape} vs {gd.shape}")
    diff = _dct2(gd) - _dct2(pd)
    err = np.abs(diff)
    n = err.shape[0]
    m = topk_count(k, err[0].size)
    sample_means = np.empty(n)
    grad_coeff = np.zeros_like(diff)  # dL/d(diff), nonzero only where selected
    for s in range(n):
        flat = err[s].ravel()
        idx = np.argsort(-flat, kind="stable")[:m]
        sample_means[s] = flat[idx].mean()
        gsel = np.zeros(flat.size)
        gsel[idx] = np.sign(diff[s].ravel()[idx]) / (n * m)
        grad_coeff[s] = gsel.reshape(diff[s].shape)
    out = float(sample_means.mean())
    if tape is None:
        return out
    pv, gv = as_var(tape, pred), as_var(tape, gt)
    gt_side = _idct2(grad_coeff)  # adjoint of the DCT, shared by both inputs

    def backward(g):
        g0 = g.ravel()[0]
        return -g0 * gt_side, g0 * gt_side

    return tape.record("topk_dct_loss", np.full((1, 1, 1, 1), out), (pv, gv), backward)


def compute_loss(pred, gt, spec: LossSpec, epoch: int):
    """Dispatch on the spec; returns the scalar loss (Var or float)."""
    if spec.kind == "l1":
        return l1_loss(pred, gt)
    return topk_dct_loss(pred, gt, k_schedule(epoch, spec))


def scalar_loss(pred, gt, spec: LossSpec, epoch: int) -> float:
    return scalar_value(compute_loss(pred, gt, spec, epoch))
