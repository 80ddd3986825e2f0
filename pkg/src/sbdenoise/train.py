"""Training, evaluation, and the Bayer-preserving self-ensemble.

The optimizer is Adam with optional variance rectification (RAdam): while
the rectification term rho_t stays <= 4 the update is momentum-only SGD,
afterwards the usual adaptive step scaled by the rectifier r_t.  Updates
are in-place on the parameter arrays (single writer, one training loop).

The self-ensemble runs the model on all eight phase-preserving flip/rot
variants of the input plane, inverts each output back, and averages.
Member crops differ (phase restoration plus a mod-4 crop so the model's
two halvings divide evenly), so members are compared on the common window
where all eight are valid; averaging uses a balanced pairwise tree, which
keeps the zero-parameter identity model an exact identity on that window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import report as rp
from .autodiff import Tape, scalar_value
from .data import FLAG_COMBOS, BayerImage, Pair, augment_plane, invert_augment
from .loss import LossSpec, compute_loss, k_schedule
from .model import Model, ModelConfig, init_params, model_forward, save_checkpoint
from .transforms import _dct2, depth_to_space, space_to_depth

OPTIMIZER_KINDS = ("adam", "radam")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    kind: str
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def make_optimizer(params: dict[str, np.ndarray], kind: str = "radam") -> OptimizerState:
    if kind not in OPTIMIZER_KINDS:
        raise ValueError(f"optimizer must be one of {OPTIMIZER_KINDS}, got {kind!r}")
    return OptimizerState(
        kind,
        {k: np.zeros_like(v) for k, v in params.items()},
        {k: np.zeros_like(v) for k, v in params.items()},
    )


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray], lr: float) -> None:
    """Advance parameters one step, in place; grads must be keyed like params."""
    if set(grads) != set(params) or set(state.m) != set(params):
        raise ValueError("optimizer_step: params/grads/state keys do not match")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    rect = None
    if state.kind == "radam":
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * b2**t / bias2
        if rho_t > 4.0:
            rect = math.sqrt(
                (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
            )
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bias1
        if state.kind == "adam":
            p -= lr * mhat / (np.sqrt(v / bias2) + state.eps)
        elif rect is None:  # rectifier undefined early on: momentum-only step
            p -= lr * mhat
        else:
            p -= lr * rect * mhat / (np.sqrt(v / bias2) + state.eps)


# ---------------------------------------------------------------------------
# metrics


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs give the +inf sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def freq_balance(denoised: np.ndarray, clean: np.ndarray) -> float:
    """max/mean of |DCT error| over one image's packed 4-channel form.

    1.0 means residual error is spread evenly across frequencies; large
    values mean a few frequencies dominate.  Returns 1.0 for an exact
    reconstruction (max = mean = 0).
    """
    err = np.abs(_dct2(space_to_depth(clean, 2)) - _dct2(space_to_depth(denoised, 2)))
    peak = float(err.max())
    if peak == 0.0:
        return 1.0
    return peak / float(err.mean())


# ---------------------------------------------------------------------------
# single-pass and ensemble inference


def denoise_plane(m: Model, plane: np.ndarray) -> np.ndarray:
    """Pack a (1, 1, h, w) plane, run the model once, unpack."""
    h, w = plane.shape[-2], plane.shape[-1]
    if h % 4 or w % 4:
        raise ValueError(
            f"denoise_plane: dims must be divisible by 4 (one s2d + one DWT halving), "
            f"got {h}x{w}"
        )
    return depth_to_space(model_forward(m, space_to_depth(plane, 2)), 2)


def _member_mask(h: int, w: int, flags) -> np.ndarray:
    aug = augment_plane(np.ones((1, 1, h, w)), *flags)
    ah, aw = aug.shape[-2], aug.shape[-1]
    kept = np.zeros_like(aug)
    kept[..., : ah - ah % 4, : aw - aw % 4] = 1.0
    return invert_augment(kept, *flags)


MIN_ENSEMBLE_SIZE = 16


def _check_ensemble_size(h: int, w: int) -> None:
    if h % 4 or w % 4 or h < MIN_ENSEMBLE_SIZE or w < MIN_ENSEMBLE_SIZE:
        raise ValueError(
            f"ensemble needs h, w divisible by 4 and >= {MIN_ENSEMBLE_SIZE}, got {h}x{w}"
        )


def ensemble_window(h: int, w: int, flags_list=None) -> tuple[int, int, int, int]:
    """(row0, col0, height, width) where every ensemble member is valid.

    The window starts on even indices and has even extent, so it is itself
    RGGB-aligned.
    """
    _check_ensemble_size(h, w)
    flags_list = FLAG_COMBOS if flags_list is None else tuple(flags_list)
    common = np.ones((h, w))
    for flags in flags_list:
        common *= _member_mask(h, w, flags)[0, 0]
    rows = np.flatnonzero(common.any(axis=1))
    cols = np.flatnonzero(common.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    if not common[r0:r1, c0:c1].all():
        raise AssertionError("ensemble coverage is not rectangular")
    r0 += r0 % 2
    c0 += c0 % 2
    hh = (r1 - r0) - (r1 - r0) % 2
    ww = (c1 - c0) - (c1 - c0) % 2
    if hh < 2 or ww < 2:
        raise ValueError(f"ensemble window degenerate for {h}x{w} input")
    return r0, c0, hh, ww


def _pairwise_mean(arrs: list[np.ndarray]) -> np.ndarray:
    # balanced tree keeps the mean of n identical arrays bit-exact
    items = list(arrs)
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0] / len(arrs)


def ensemble_denoise(m: Model, noisy: BayerImage, flags_list=None) -> BayerImage:
    """Average the model over phase-preserving flip/rot variants.

    Returns the denoised plane on the common window (see ensemble_window
    for its placement); callers align ground truth with the same window.
    """
    h, w = noisy.hw
    _check_ensemble_size(h, w)
    flags_list = FLAG_COMBOS if flags_list is None else tuple(flags_list)
    members = []
    for flags in flags_list:
        aug = augment_plane(noisy.plane, *flags)
        ah, aw = aug.shape[-2], aug.shape[-1]
        bh, bw = ah - ah % 4, aw - aw % 4
        out = denoise_plane(m, aug[..., :bh, :bw])
        canvas = np.zeros_like(aug)
        canvas[..., :bh, :bw] = out
        members.append(invert_augment(canvas, *flags))
    r0, c0, wh, ww = ensemble_window(h, w, flags_list)
    crops = [mem[..., r0 : r0 + wh, c0 : c0 + ww] for mem in members]
    return BayerImage(_pairwise_mean(crops))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRow:
    pair_id: str
    psnr_noisy: float
    psnr_denoised: float
    freq_balance: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mean_psnr_noisy: float
    mean_psnr_denoised: float
    mean_freq_balance: float
    used_ensemble: bool


def evaluate(m: Model, pairs: list[Pair], use_ensemble: bool = False) -> EvalReport:
    """Per-pair PSNR (noisy and denoised vs clean) plus DCT-balance stat.

    With the ensemble, scores are computed on the common ensemble window;
    single-pass scores use the whole plane.
    """
    rows = []
    for pair in pairs:
        if use_ensemble:
            den = ensemble_denoise(m, pair.noisy).plane
            r0, c0, wh, ww = ensemble_window(*pair.noisy.hw)
            clean = pair.clean.plane[..., r0 : r0 + wh, c0 : c0 + ww]
            noisy = pair.noisy.plane[..., r0 : r0 + wh, c0 : c0 + ww]
        else:
            den = denoise_plane(m, pair.noisy.plane)
            clean = pair.clean.plane
            noisy = pair.noisy.plane
        rows.append(
            EvalRow(
                pair.pair_id,
                psnr(noisy, clean),
                psnr(den, clean),
                freq_balance(den, clean),
            )
        )
    return EvalReport(
        rows,
        float(np.mean([r.psnr_noisy for r in rows])),
        float(np.mean([r.psnr_denoised for r in rows])),
        float(np.mean([r.freq_balance for r in rows])),
        use_ensemble,
    )


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    steps_per_epoch: int = 24
    batch_size: int = 8
    patch_size: int = 32
    lr: float = 2e-3
    lr_drop_epoch: int = 20      # lr divides by lr_drop_factor from this epoch on
    lr_drop_factor: float = 10.0
    loss: LossSpec = field(default_factory=LossSpec)
    optimizer: str = "radam"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch, batch_size must all be >= 1")
        if self.patch_size < 8 or self.patch_size % 4:
            raise ValueError(f"patch_size must be >= 8 and divisible by 4, got {self.patch_size}")
        if self.lr <= 0 or self.lr_drop_factor < 1:
            raise ValueError("need lr > 0 and lr_drop_factor >= 1")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValueError(f"optimizer must be one of {OPTIMIZER_KINDS}")
        self.loss.validate()


@dataclass
class EpochStats:
    epoch: int
    step: int           # cumulative optimizer steps at epoch end
    train_loss: float   # mean step loss over the epoch
    k_percent: float
    val_psnr: float
    best_val_psnr: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    best_val_psnr: float
    best_epoch: int
    checkpoint_path: Path | None
    metrics_path: Path | None


def bind_model(m: Model, tape: Tape) -> tuple[Model, dict]:
    """Register every parameter on the tape; returns (var model, name -> Var).

    Relies on ``map`` and ``named`` walking leaves in the same order, which
    the model tests pin.
    """
    names = iter([n for n, _ in m.named()])
    bound: dict[str, object] = {}

    def binder(arr):
        v = tape.param(arr)
        bound[next(names)] = v
        return v

    return m.map(binder), bound


def _sample_batch(pairs: list[Pair], tcfg: TrainConfig, rng: np.random.Generator):
    """Random pair, random flip/rot, random even-aligned patch; packed 4ch."""
    ps = tcfg.patch_size
    noisy = np.empty((tcfg.batch_size, 1, ps, ps))
    clean = np.empty((tcfg.batch_size, 1, ps, ps))
    for i in range(tcfg.batch_size):
        pair = pairs[int(rng.integers(len(pairs)))]
        fh, fv, rot = (bool(x) for x in rng.integers(0, 2, 3))
        np_aug = augment_plane(pair.noisy.plane, fh, fv, rot)
        cp_aug = augment_plane(pair.clean.plane, fh, fv, rot)
        h, w = np_aug.shape[-2], np_aug.shape[-1]
        if h < ps or w < ps:
            raise ValueError(
                f"patch_size {ps} exceeds augmented image {h}x{w} "
                f"(images must be at least patch_size + 2 per side)"
            )
        r = 2 * int(rng.integers((h - ps) // 2 + 1))
        c = 2 * int(rng.integers((w - ps) // 2 + 1))
        noisy[i, 0] = np_aug[0, 0, r : r + ps, c : c + ps]
        clean[i, 0] = cp_aug[0, 0, r : r + ps, c : c + ps]
    return space_to_depth(noisy, 2), space_to_depth(clean, 2)


def _val_psnr(m: Model, val_pairs: list[Pair]) -> float:
    scores = [psnr(denoise_plane(m, p.noisy.plane), p.clean.plane) for p in val_pairs]
    return float(np.mean(scores))


def train(model: Model | ModelConfig, tcfg: TrainConfig, train_pairs: list[Pair],
          val_pairs: list[Pair], out_dir=None) -> TrainResult:
    """Train and track the best validation PSNR.

    Deterministic per (model seed, tcfg.seed): two runs produce
    bit-identical parameters.  The returned model carries the
    best-validation parameters (also saved to ``out_dir/best.ckpt`` along
    with ``metrics.csv`` when out_dir is given).  Aborts with RuntimeError
    on a non-finite loss.
    """
    if isinstance(model, ModelConfig):
        model = init_params(model)
    tcfg.validate()
    if not train_pairs or not val_pairs:
        raise ValueError("train: need non-empty train and validation pair lists")
    rng = np.random.default_rng(tcfg.seed)
    params = model.param_dict()
    state = make_optimizer(params, tcfg.optimizer)
    use_topk = tcfg.loss.kind == "topk_dct"

    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = out / "best.ckpt" if out else None
    metrics_path = out / "metrics.csv" if out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    history: list[EpochStats] = []
    best = -math.inf
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    steps_done = 0
    for epoch in range(tcfg.epochs):
        k_now = k_schedule(epoch, tcfg.loss) if use_topk else 100.0
        lr = tcfg.lr
        if epoch >= tcfg.lr_drop_epoch:
            lr = tcfg.lr / tcfg.lr_drop_factor
        losses = np.empty(tcfg.steps_per_epoch)
        for step in range(tcfg.steps_per_epoch):
            xb, yb = _sample_batch(train_pairs, tcfg, rng)
            tape = Tape()
            mv, bound = bind_model(model, tape)
            loss = compute_loss(model_forward(mv, xb), yb, tcfg.loss, epoch)
            lval = scalar_value(loss)
            if not math.isfinite(lval):
                raise RuntimeError(
                    f"training diverged: loss {lval} at epoch {epoch} step {step}"
                )
            grads_by_id = tape.backward(loss)
            grads = {name: grads_by_id[v.id] for name, v in bound.items()}
            optimizer_step(state, params, grads, lr)
            losses[step] = lval
            steps_done += 1
        score = _val_psnr(model, val_pairs)
        if score > best:
            best = score
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
            if ckpt_path:
                save_checkpoint(ckpt_path, model, epoch=epoch,
                                extra={"train_seed": tcfg.seed, "val_psnr": repr(score)})
        history.append(EpochStats(epoch, steps_done, float(losses.mean()),
                                  float(k_now), score, best))
    for name, arr in model.named():
        arr[...] = best_params[name]
    if metrics_path:
        rp.write_metrics_csv(metrics_path, history)
    return TrainResult(model, history, best, best_epoch, ckpt_path, metrics_path)


# ---------------------------------------------------------------------------
# bottleneck comparison harness


BENCH_VARIANTS = ("nodwt", "dwt", "sdwt", "sdwt_topk")


@dataclass
class BenchRow:
    variant: str
    seed: int
    params: int
    best_val_psnr: float
    final_val_psnr: float
    noisy_psnr: float
    freq_balance: float


def run_bench(mcfg: ModelConfig, tcfg: TrainConfig, train_pairs: list[Pair],
              val_pairs: list[Pair], seeds, variants=BENCH_VARIANTS,
              topk_loss: LossSpec | None = None, progress=None) -> list[BenchRow]:
    """Train every (variant, seed) combination and score it on val_pairs.

    Variants are the three bottleneck kinds under L1 plus ``sdwt_topk``
    (the sdwt model trained with the top-k DCT loss), all from identical
    seeds and data.  Deterministic per inputs; rerunning appends nothing
    and changes nothing.
    """
    from .model import param_count  # local to avoid cluttering module surface

    if topk_loss is None:
        topk_loss = LossSpec("topk_dct", k_start=100.0, k_min=10.0, k_decay_per_epoch=3.0)
    rows = []
    for seed in seeds:
        for variant in variants:
            if variant not in BENCH_VARIANTS:
                raise ValueError(f"unknown bench variant {variant!r}")
            kind = "sdwt" if variant.startswith("sdwt") else variant
            loss = topk_loss if variant == "sdwt_topk" else LossSpec("l1")
            m = init_params(replace(mcfg, kind=kind, seed=seed))
            res = train(m, replace(tcfg, seed=seed, loss=loss), train_pairs, val_pairs)
            rep = evaluate(res.model, val_pairs)
            rows.append(
                BenchRow(
                    variant,
                    seed,
                    param_count(res.model),
                    res.best_val_psnr,
                    res.history[-1].val_psnr,
                    rep.mean_psnr_noisy,
                    rep.mean_freq_balance,
                )
            )
            if progress is not None:
                progress(rows[-1])
    return rows
