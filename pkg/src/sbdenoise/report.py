"""Delimited reports and their companion figures.

CSV writing is plain stdlib; floats are written with repr so files
round-trip exactly and reruns are byte-identical (no timestamps anywhere).
matplotlib is imported inside the figure functions (Agg backend) so that
importing this module, or training with CSV output, stays figure-free.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write_rows(path, header: list[str], rows: list[list]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_metrics_csv(path, history) -> None:
    """One row per epoch: losses, scheduled k, validation PSNRs."""
    _write_rows(
        path,
        ["epoch", "step", "train_loss", "k_percent", "val_psnr", "best_val_psnr"],
        [[h.epoch, h.step, h.train_loss, h.k_percent, h.val_psnr, h.best_val_psnr]
         for h in history],
    )


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (v if k == "epoch" or k == "step" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_eval_csv(path, report) -> None:
    _write_rows(
        path,
        ["pair_id", "psnr_noisy", "psnr_denoised", "freq_balance"],
        [[r.pair_id, r.psnr_noisy, r.psnr_denoised, r.freq_balance] for r in report.rows],
    )


def write_bench_csv(path, rows) -> None:
    _write_rows(
        path,
        ["variant", "seed", "params", "best_val_psnr", "final_val_psnr",
         "noisy_psnr", "freq_balance"],
        [[r.variant, r.seed, r.params, r.best_val_psnr, r.final_val_psnr,
          r.noisy_psnr, r.freq_balance] for r in rows],
    )


def read_bench_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            for k in ("best_val_psnr", "final_val_psnr", "noisy_psnr", "freq_balance"):
                rec[k] = float(rec[k])
            rec["seed"] = int(rec["seed"])
            rec["params"] = int(rec["params"])
            out.append(rec)
    return out


def bench_table(rows) -> str:
    """Fixed-width text table of bench rows plus per-variant means."""
    lines = [f"{'variant':<10} {'seed':>5} {'params':>9} {'best_psnr':>10} "
             f"{'noisy_psnr':>10} {'freq_bal':>9}"]
    for r in rows:
        lines.append(f"{r.variant:<10} {r.seed:>5} {r.params:>9} {r.best_val_psnr:>10.3f} "
                     f"{r.noisy_psnr:>10.3f} {r.freq_balance:>9.3f}")
    variants = []
    for r in rows:
        if r.variant not in variants:
            variants.append(r.variant)
    if any(sum(1 for r in rows if r.variant == v) > 1 for v in variants):
        lines.append("-" * len(lines[0]))
        for v in variants:
            vals = [r.best_val_psnr for r in rows if r.variant == v]
            bals = [r.freq_balance for r in rows if r.variant == v]
            lines.append(f"{v + ' mean':<16} {'':>9} {np.mean(vals):>10.3f} "
                         f"{'':>10} {np.mean(bals):>9.3f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# figures


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def render_training_curves(history, out_png) -> None:
    """Loss / k schedule on the left, validation PSNR on the right."""
    plt = _plt()
    epochs = [h.epoch for h in history]
    fig, (ax_l, ax_r) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    ax_l.plot(epochs, [h.train_loss for h in history], color="tab:blue", label="train loss")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("train loss", color="tab:blue")
    ax_k = ax_l.twinx()
    ax_k.plot(epochs, [h.k_percent for h in history], color="tab:orange", label="k %")
    ax_k.set_ylabel("k percent", color="tab:orange")
    ax_k.set_ylim(0, 105)
    ax_l.set_title("training loss and k schedule")
    ax_r.plot(epochs, [h.val_psnr for h in history], label="val PSNR")
    ax_r.plot(epochs, [h.best_val_psnr for h in history], linestyle="--",
              label="best so far")
    ax_r.set_xlabel("epoch")
    ax_r.set_ylabel("PSNR [dB]")
    ax_r.legend()
    ax_r.set_title("validation PSNR")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def render_eval_report(report, out_png) -> None:
    """Per-image noisy/denoised PSNR bars plus the DCT-balance scatter."""
    plt = _plt()
    n = len(report.rows)
    idx = np.arange(n)
    cap = 80.0  # finite stand-in so inf sentinel bars stay plottable
    noisy = [min(r.psnr_noisy, cap) for r in report.rows]
    den = [min(r.psnr_denoised, cap) for r in report.rows]
    fig, (ax_p, ax_b) = plt.subplots(1, 2, figsize=(11.0, 4.0))
    ax_p.bar(idx - 0.2, noisy, width=0.4, label="noisy")
    ax_p.bar(idx + 0.2, den, width=0.4, label="denoised")
    ax_p.set_xlabel("image")
    ax_p.set_ylabel("PSNR [dB]")
    mode = "ensemble" if report.used_ensemble else "single pass"
    ax_p.set_title(f"per-image PSNR ({mode})")
    ax_p.legend()
    ax_b.plot(idx, [r.freq_balance for r in report.rows], "o-")
    ax_b.set_xlabel("image")
    ax_b.set_ylabel("max/mean |DCT error|")
    ax_b.set_title("frequency balance (lower = flatter spectrum)")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def render_bench_comparison(rows, out_png) -> None:
    """Best validation PSNR per variant, one marker per seed, mean bars."""
    plt = _plt()
    variants = []
    for r in rows:
        if r.variant not in variants:
            variants.append(r.variant)
    fig, (ax, ax_b) = plt.subplots(1, 2, figsize=(11.0, 4.0))
    for i, v in enumerate(variants):
        vals = [r.best_val_psnr for r in rows if r.variant == v]
        ax.scatter([i] * len(vals), vals, color="tab:blue", zorder=3)
        ax.bar(i, np.mean(vals), color="lightsteelblue", zorder=2)
    ax.set_xticks(range(len(variants)), variants)
    ax.set_ylabel("best val PSNR [dB]")
    lo = min(r.best_val_psnr for r in rows)
    hi = max(r.best_val_psnr for r in rows)
    margin = max(0.2, 0.15 * (hi - lo))
    ax.set_ylim(lo - margin, hi + margin)
    ax.set_title("bottleneck comparison")
    for i, v in enumerate(variants):
        bals = [r.freq_balance for r in rows if r.variant == v]
        ax_b.scatter([i] * len(bals), bals, color="tab:orange", zorder=3)
        ax_b.bar(i, np.mean(bals), color="navajowhite", zorder=2)
    ax_b.set_xticks(range(len(variants)), variants)
    ax_b.set_ylabel("max/mean |DCT error|")
    ax_b.set_title("frequency balance")
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)


def save_png(path, rgb: np.ndarray) -> None:
    """8-bit PNG from a (3, h, w) or (h, w) array of values in [0, 1]."""
    plt = _plt()
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    elif arr.ndim != 2:
        raise ValueError(f"save_png expects (3, h, w) or (h, w), got {arr.shape}")
    plt.imsave(path, np.clip(arr, 0.0, 1.0), cmap="gray" if arr.ndim == 2 else None,
               vmin=0.0, vmax=1.0)
