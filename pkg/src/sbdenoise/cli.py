"""Command-line interface.

Subcommands: gen-data, train, eval, denoise, gradcheck, bench-bottlenecks.
Every run prints its resolved configuration (defaults < config file <
explicit flags) and seed before acting.  Report paths write CSVs with
rendered figures beside them.  Exit codes: 0 success, 1 validation or
argument failure (including failed gradient checks), 2 I/O error.

numpy and the numeric modules are imported inside the command handlers so
that ``--threads`` can pin BLAS thread-count environment variables first.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

_GEN_DEFAULTS = dict(count=64, size=80, noise_a=0.01, noise_b=0.0001, seed=0,
                     kinds="flat,gradient,checker,star,edges")
_TRAIN_DEFAULTS = dict(bottleneck="sdwt", blocks=2, filters=16, model_seed=0,
                       loss="l1", k_start=100.0, k_min=10.0, k_decay=3.0,
                       epochs=30, steps_per_epoch=24, batch_size=8, patch_size=32,
                       lr=2e-3, lr_drop_epoch=20, lr_drop_factor=10.0,
                       optimizer="radam", seed=0)
_EVAL_DEFAULTS = dict(ensemble=False)
_DENOISE_DEFAULTS = dict(ensemble=True)
_GRADCHECK_DEFAULTS = dict(eps=1e-6, only="")
_BENCH_DEFAULTS = dict(blocks=2, filters=16, model_seed=0, k_start=100.0, k_min=10.0,
                       k_decay=3.0, epochs=30, steps_per_epoch=24, batch_size=8,
                       patch_size=32, lr=2e-3, lr_drop_epoch=20, lr_drop_factor=10.0,
                       optimizer="radam", seeds="0,1,2",
                       variants="nodwt,dwt,sdwt,sdwt_topk")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; this project reserves 2 for I/O errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="key=value file; flags override it")
    sp.add_argument("--threads", type=int, default=1,
                    help="BLAS/OpenMP thread cap (default 1, deterministic)")


def build_parser() -> _Parser:
    parser = _Parser(prog="sbdenoise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    sp = sub.add_parser("gen-data", help="generate a synthetic Bayer pair dataset")
    _add_common(sp)
    sp.add_argument("--out", required=True, help="output dataset directory")
    sp.add_argument("--count", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--noise-a", type=float, dest="noise_a")
    sp.add_argument("--noise-b", type=float, dest="noise_b")
    sp.add_argument("--kinds", help="comma-separated scene kinds")
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("train", help="train a denoiser")
    _add_common(sp)
    sp.add_argument("--data", required=True, help="training dataset directory")
    sp.add_argument("--val-data", required=True, dest="val_data",
                    help="held-out dataset directory")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--bottleneck", choices=["sdwt", "dwt", "nodwt"])
    sp.add_argument("--blocks", type=int)
    sp.add_argument("--filters", type=int)
    sp.add_argument("--model-seed", type=int, dest="model_seed")
    sp.add_argument("--loss", choices=["l1", "topk_dct"])
    sp.add_argument("--k-start", type=float, dest="k_start")
    sp.add_argument("--k-min", type=float, dest="k_min")
    sp.add_argument("--k-decay", type=float, dest="k_decay",
                    help="k percentage points per epoch")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--patch-size", type=int, dest="patch_size")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-drop-epoch", type=int, dest="lr_drop_epoch")
    sp.add_argument("--lr-drop-factor", type=float, dest="lr_drop_factor")
    sp.add_argument("--optimizer", choices=["radam", "adam"])
    sp.add_argument("--seed", type=int, help="training stream seed")

    sp = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="directory for report.csv + report.png")
    sp.add_argument("--ensemble", action=argparse.BooleanOptionalAction,
                    help="use the 8-way self-ensemble")

    sp = sub.add_parser("denoise", help="denoise one .sbt Bayer plane")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help=".sbt file with a (1,1,h,w) plane")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--png", action="store_true",
                    help="also write a bilinear-demosaiced 8-bit preview")
    sp.add_argument("--ensemble", action=argparse.BooleanOptionalAction,
                    help="8-way self-ensemble (default on)")

    sp = sub.add_parser("gradcheck", help="finite-difference check every op")
    _add_common(sp)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--only", help="comma-separated subset of check names")

    sp = sub.add_parser("bench-bottlenecks",
                        help="train all bottleneck variants and compare")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--val-data", required=True, dest="val_data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", help="comma-separated seeds")
    sp.add_argument("--variants", help="comma-separated subset of "
                                       "nodwt,dwt,sdwt,sdwt_topk")
    sp.add_argument("--blocks", type=int)
    sp.add_argument("--filters", type=int)
    sp.add_argument("--model-seed", type=int, dest="model_seed")
    sp.add_argument("--k-start", type=float, dest="k_start")
    sp.add_argument("--k-min", type=float, dest="k_min")
    sp.add_argument("--k-decay", type=float, dest="k_decay")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--patch-size", type=int, dest="patch_size")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-drop-epoch", type=int, dest="lr_drop_epoch")
    sp.add_argument("--lr-drop-factor", type=float, dest="lr_drop_factor")
    sp.add_argument("--optimizer", choices=["radam", "adam"])
    return parser


def _load_config_file(path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _resolve(ns, defaults: dict) -> dict:
    cfg = dict(defaults)
    if getattr(ns, "config", None):
        for key, raw in _load_config_file(ns.config).items():
            if key not in cfg:
                raise ValueError(f"config file key {key!r} unknown for {ns.cmd}")
            cfg[key] = _coerce(raw, cfg[key])
    for key in cfg:
        flag = getattr(ns, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _print_config(ns, cfg: dict) -> None:
    print(f"[{ns.cmd}] resolved config:")
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}")


def _split_csv(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# command handlers


def _cmd_gen_data(ns) -> int:
    from . import data as dt

    cfg = _resolve(ns, _GEN_DEFAULTS)
    _print_config(ns, cfg)
    dcfg = dt.DatasetConfig(
        count=cfg["count"],
        size=cfg["size"],
        noise=dt.NoiseModel(cfg["noise_a"], cfg["noise_b"]),
        seed=cfg["seed"],
        kinds=tuple(_split_csv(cfg["kinds"])),
    )
    pairs = dt.make_dataset(ns.out, dcfg)
    print(f"wrote {len(pairs)} pairs under {ns.out}")
    return 0


def _model_config(cfg, kind: str):
    from .model import ModelConfig

    return ModelConfig(kind=kind, blocks=cfg["blocks"], filters=cfg["filters"],
                       seed=cfg["model_seed"])


def _train_config(cfg, loss_kind: str):
    from .loss import LossSpec
    from .train import TrainConfig

    spec = LossSpec(loss_kind, k_start=cfg["k_start"], k_min=cfg["k_min"],
                    k_decay_per_epoch=cfg["k_decay"])
    return TrainConfig(
        epochs=cfg["epochs"],
        steps_per_epoch=cfg["steps_per_epoch"],
        batch_size=cfg["batch_size"],
        patch_size=cfg["patch_size"],
        lr=cfg["lr"],
        lr_drop_epoch=cfg["lr_drop_epoch"],
        lr_drop_factor=cfg["lr_drop_factor"],
        loss=spec,
        optimizer=cfg["optimizer"],
        seed=cfg["seed"],
    )


def _cmd_train(ns) -> int:
    from . import report as rp
    from .data import load_dataset
    from .model import init_params
    from .train import train

    cfg = _resolve(ns, _TRAIN_DEFAULTS)
    _print_config(ns, cfg)
    model = init_params(_model_config(cfg, cfg["bottleneck"]))
    tcfg = _train_config(cfg, cfg["loss"])
    train_pairs = load_dataset(ns.data)
    val_pairs = load_dataset(ns.val_data)
    res = train(model, tcfg, train_pairs, val_pairs, out_dir=ns.out)
    curves = Path(ns.out) / "curves.png"
    rp.render_training_curves(res.history, curves)
    print(f"best val PSNR {res.best_val_psnr:.3f} dB at epoch {res.best_epoch}")
    print(f"checkpoint: {res.checkpoint_path}")
    print(f"metrics:    {res.metrics_path}")
    print(f"figure:     {curves}")
    return 0


def _cmd_eval(ns) -> int:
    from . import report as rp
    from .data import load_dataset
    from .model import load_checkpoint
    from .train import evaluate

    cfg = _resolve(ns, _EVAL_DEFAULTS)
    _print_config(ns, cfg)
    model, manifest = load_checkpoint(ns.checkpoint)
    pairs = load_dataset(ns.data)
    rep = evaluate(model, pairs, use_ensemble=cfg["ensemble"])
    mode = "ensemble" if cfg["ensemble"] else "single-pass"
    print(f"{len(rep.rows)} images, {mode} (checkpoint epoch {manifest.get('epoch')})")
    print(f"mean PSNR noisy:    {rep.mean_psnr_noisy:.3f} dB")
    print(f"mean PSNR denoised: {rep.mean_psnr_denoised:.3f} dB")
    print(f"mean freq balance:  {rep.mean_freq_balance:.3f}")
    if ns.out:
        out = Path(ns.out)
        out.mkdir(parents=True, exist_ok=True)
        rp.write_eval_csv(out / "report.csv", rep)
        rp.render_eval_report(rep, out / "report.png")
        print(f"report: {out / 'report.csv'} and {out / 'report.png'}")
    return 0


def _cmd_denoise(ns) -> int:
    from . import report as rp
    from .data import BayerImage, demosaic_bilinear
    from .model import load_checkpoint
    from .tensor import load_sbt, save_sbt
    from .train import denoise_plane, ensemble_denoise

    cfg = _resolve(ns, _DENOISE_DEFAULTS)
    _print_config(ns, cfg)
    model, _ = load_checkpoint(ns.checkpoint)
    img = BayerImage(load_sbt(ns.input))
    if cfg["ensemble"]:
        den = ensemble_denoise(model, img)
    else:
        den = BayerImage(denoise_plane(model, img.plane))
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    sbt_path = out / "denoised.sbt"
    save_sbt(sbt_path, den.plane)
    print(f"denoised plane: {sbt_path} ({den.hw[0]}x{den.hw[1]})")
    if ns.png:
        png_path = out / "denoised.png"
        rp.save_png(png_path, demosaic_bilinear(den))
        print(f"preview: {png_path}")
    return 0


def _cmd_gradcheck(ns) -> int:
    from .gradcheck import run_checks

    cfg = _resolve(ns, _GRADCHECK_DEFAULTS)
    _print_config(ns, cfg)
    only = _split_csv(cfg["only"]) or None
    results = run_checks(only=only, eps=cfg["eps"])
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err {r.max_rel_err:10.3e}  "
              f"tol {r.tol:7.1e}  {status}")
        ok = ok and r.passed
    print(f"gradcheck: {'all passed' if ok else 'FAILURES above'}")
    return 0 if ok else 1


def _cmd_bench(ns) -> int:
    from . import report as rp
    from .data import load_dataset
    from .train import run_bench

    cfg = _resolve(ns, _BENCH_DEFAULTS)
    _print_config(ns, cfg)
    seeds = [int(s) for s in _split_csv(cfg["seeds"])]
    variants = tuple(_split_csv(cfg["variants"]))
    mcfg = _model_config(cfg, "sdwt")  # kind is overridden per variant
    train_cfg = dict(cfg)
    train_cfg["loss"] = "l1"
    train_cfg["seed"] = 0  # per-variant seeds come from --seeds
    tcfg = _train_config(train_cfg, "l1")
    from .loss import LossSpec

    topk = LossSpec("topk_dct", k_start=cfg["k_start"], k_min=cfg["k_min"],
                    k_decay_per_epoch=cfg["k_decay"])
    train_pairs = load_dataset(ns.data)
    val_pairs = load_dataset(ns.val_data)

    def progress(row):
        print(f"  done: {row.variant} seed {row.seed} -> "
              f"best {row.best_val_psnr:.3f} dB ({row.params} params)")

    rows = run_bench(mcfg, tcfg, train_pairs, val_pairs, seeds,
                     variants=variants, topk_loss=topk, progress=progress)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    rp.write_bench_csv(out / "bench.csv", rows)
    rp.render_bench_comparison(rows, out / "bench.png")
    print(rp.bench_table(rows))
    print(f"bench report: {out / 'bench.csv'} and {out / 'bench.png'}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "denoise": _cmd_denoise,
    "gradcheck": _cmd_gradcheck,
    "bench-bottlenecks": _cmd_bench,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    threads = max(1, ns.threads)
    for var in _THREAD_VARS:
        os.environ[var] = str(threads)
    try:
        return _HANDLERS[ns.cmd](ns)
    except OSError as exc:
        print(f"sbdenoise {ns.cmd}: i/o error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"sbdenoise {ns.cmd}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
