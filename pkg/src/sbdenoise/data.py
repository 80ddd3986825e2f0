"""Synthetic Bayer data: scenes, RGGB mosaic, sensor noise, phase-preserving
flip/rotate augmentation, and the on-disk pair format.

The Bayer phase is fixed RGGB: pixel (2i, 2j) red, (2i, 2j+1) and
(2i+1, 2j) green, (2i+1, 2j+1) blue.  Flipping or rotating a raw plane
moves that phase, so the augmentation here crops one row/column pair off
the transformed plane where needed to restore RGGB.  The crop offsets are
derived by pushing a tiled 2x2 phase marker through the same geometry ops,
not hand-tabulated, and ``invert_augment`` undoes geometry exactly (values
are only ever moved, never recomputed).

A dataset directory holds ``manifest.csv`` (id, kind, seed, noise_a,
noise_b per row) plus ``<id>_clean.sbt`` / ``<id>_noisy.sbt`` planes.
Generation is deterministic per config: byte-identical reruns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import load_sbt, save_sbt

SCENE_KINDS = ("flat", "gradient", "checker", "star", "edges")
_KIND_ID = {k: i for i, k in enumerate(SCENE_KINDS)}


@dataclass
class BayerImage:
    """Single raw mosaic plane (1, 1, h, w), RGGB phase, values in [0, 1]."""

    plane: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.plane, dtype=np.float64)
        if p.ndim != 4 or p.shape[0] != 1 or p.shape[1] != 1:
            raise ValueError(f"BayerImage plane must be (1, 1, h, w), got {p.shape}")
        if p.shape[2] % 2 or p.shape[3] % 2:
            raise ValueError(f"BayerImage dims must be even, got {p.shape[2]}x{p.shape[3]}")
        self.plane = np.ascontiguousarray(p)

    @property
    def hw(self) -> tuple[int, int]:
        return self.plane.shape[2], self.plane.shape[3]


@dataclass
class NoiseModel:
    """Signal-dependent Gaussian: variance a*clean + b per pixel."""

    a: float = 0.01
    b: float = 0.0001

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"noise coefficients must be >= 0, got a={self.a}, b={self.b}")


# ---------------------------------------------------------------------------
# scenes


def gen_clean_scene(kind: str, size: int, seed: int, period: int | None = None) -> np.ndarray:
    """Deterministic (3, size, size) RGB scene with values in [0, 1]."""
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}, options: {SCENE_KINDS}")
    if size < 2 or size % 2:
        raise ValueError(f"scene size must be even and >= 2, got {size}")
    rng = np.random.default_rng([_KIND_ID[kind], size, seed])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "flat":
        img = np.broadcast_to(rng.uniform(0.2, 0.9, 3)[:, None, None], (3, size, size)).copy()
    elif kind == "gradient":
        c0 = rng.uniform(0.0, 1.0, 3)
        c1 = rng.uniform(0.0, 1.0, 3)
        ax, ay = rng.uniform(-1.0, 1.0, 2)
        if abs(ax) + abs(ay) < 1e-3:
            ax = 1.0
        ramp = ax * xx + ay * yy
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
        img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp
    elif kind == "checker":
        # default cells stay >= 4 px: cell-2 checkers alias to noise under
        # 2x2 mosaic sampling and are unrecoverable by any denoiser
        p = int(period) if period is not None else int(rng.choice([4, 8]))
        if p < 1:
            raise ValueError(f"checker period must be >= 1, got {p}")
        cells = ((yy // p).astype(int) + (xx // p).astype(int)) % 2
        img = np.broadcast_to(cells.astype(np.float64), (3, size, size)).copy()
    elif kind == "star":
        # spoke count capped so ray spacing stays above the mosaic pitch
        # outside a small central disc
        spokes = 2 * int(rng.integers(3, 7))
        theta = np.arctan2(yy - (size - 1) / 2.0, xx - (size - 1) / 2.0)
        img = np.broadcast_to(0.5 + 0.5 * np.cos(spokes * theta), (3, size, size)).copy()
    else:  # edges: random axis-aligned color rectangles over a base color
        img = np.broadcast_to(rng.uniform(0.0, 1.0, 3)[:, None, None], (3, size, size)).copy()
        for _ in range(int(rng.integers(3, 7))):
            color = rng.uniform(0.0, 1.0, 3)
            r0, c0 = rng.integers(0, size, 2)
            r1 = int(rng.integers(r0 + 1, size + 1))
            c1 = int(rng.integers(c0 + 1, size + 1))
            img[:, r0:r1, c0:c1] = color[:, None, None]
    return np.clip(img, 0.0, 1.0)


def mosaic_rggb(rgb: np.ndarray) -> BayerImage:
    """Sample an RGB (3, h, w) image onto a single RGGB plane."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"mosaic_rggb expects (3, h, w), got {rgb.shape}")
    h, w = rgb.shape[1:]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic_rggb: dims must be even, got {h}x{w}")
    plane = np.empty((1, 1, h, w))
    plane[0, 0, 0::2, 0::2] = rgb[0, 0::2, 0::2]  # R
    plane[0, 0, 0::2, 1::2] = rgb[1, 0::2, 1::2]  # G1
    plane[0, 0, 1::2, 0::2] = rgb[1, 1::2, 0::2]  # G2
    plane[0, 0, 1::2, 1::2] = rgb[2, 1::2, 1::2]  # B
    return BayerImage(plane)


def add_noise(clean: BayerImage, nm: NoiseModel, seed: int) -> BayerImage:
    """clip(clean + N(0, a*clean + b), 0, 1), elementwise, deterministic per seed."""
    rng = np.random.default_rng(seed)
    var = nm.a * clean.plane + nm.b
    noisy = clean.plane + rng.standard_normal(clean.plane.shape) * np.sqrt(var)
    return BayerImage(np.clip(noisy, 0.0, 1.0))


# ---------------------------------------------------------------------------
# phase-preserving augmentation

FLAG_COMBOS = tuple(
    (bool(fh), bool(fv), bool(rot)) for fh in (0, 1) for fv in (0, 1) for rot in (0, 1)
)


def _apply_geometry(arr: np.ndarray, flip_h: bool, flip_v: bool, rot90: bool) -> np.ndarray:
    """Fixed op order: rot90 (CCW, last two axes), then flip_v, then flip_h."""
    if rot90:
        arr = np.rot90(arr, axes=(-2, -1))
    if flip_v:
        arr = np.flip(arr, axis=-2)
    if flip_h:
        arr = np.flip(arr, axis=-1)
    return arr


def _invert_geometry(arr: np.ndarray, flip_h: bool, flip_v: bool, rot90: bool) -> np.ndarray:
    if flip_h:
        arr = np.flip(arr, axis=-1)
    if flip_v:
        arr = np.flip(arr, axis=-2)
    if rot90:
        arr = np.rot90(arr, k=-1, axes=(-2, -1))
    return arr


def phase_offset(flip_h: bool, flip_v: bool, rot90: bool) -> tuple[int, int]:
    """Row/col crop offsets that restore RGGB after the geometry ops.

    Derived by transforming a tiled 2x2 phase marker and locating where the
    R site landed in the top-left 2x2 cell.
    """
    marker = np.tile(np.array([[0, 1], [2, 3]]), (2, 2))
    moved = _apply_geometry(marker, flip_h, flip_v, rot90)
    pos = np.argwhere(moved[:2, :2] == 0)
    return int(pos[0][0]), int(pos[0][1])


def augment_plane(plane: np.ndarray, flip_h: bool, flip_v: bool, rot90: bool) -> np.ndarray:
    """Transform a (..., h, w) raw plane, then crop to restore RGGB phase.

    The output loses 2*dr rows and 2*dc columns (dr, dc in {0, 1}) so its
    dims stay even; values are moved, never interpolated.
    """
    h, w = plane.shape[-2], plane.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"augment_plane: dims must be even, got {h}x{w}")
    moved = _apply_geometry(plane, flip_h, flip_v, rot90)
    dr, dc = phase_offset(flip_h, flip_v, rot90)
    th, tw = moved.shape[-2], moved.shape[-1]
    out = moved[..., dr : th - dr, dc : tw - dc]
    return np.ascontiguousarray(out)


def invert_augment(t: np.ndarray, flip_h: bool, flip_v: bool, rot90: bool) -> np.ndarray:
    """Undo augment_plane; cropped border pixels come back as zeros.

    Bit-exact inverse on the surviving region: geometry ops only move
    values.
    """
    dr, dc = phase_offset(flip_h, flip_v, rot90)
    th, tw = t.shape[-2], t.shape[-1]
    canvas = np.zeros(t.shape[:-2] + (th + 2 * dr, tw + 2 * dc))
    canvas[..., dr : dr + th, dc : dc + tw] = t
    return np.ascontiguousarray(_invert_geometry(canvas, flip_h, flip_v, rot90))


def augment_pair(noisy: BayerImage, clean: BayerImage, flip_h: bool, flip_v: bool,
                 rot90: bool) -> tuple[BayerImage, BayerImage]:
    """Apply one phase-preserving geometry to both planes of a pair."""
    if noisy.hw != clean.hw:
        raise ValueError(f"augment_pair: noisy {noisy.hw} vs clean {clean.hw}")
    return (
        BayerImage(augment_plane(noisy.plane, flip_h, flip_v, rot90)),
        BayerImage(augment_plane(clean.plane, flip_h, flip_v, rot90)),
    )


# ---------------------------------------------------------------------------
# demosaic preview (plumbing for PNG export only, not part of the pipeline)


def demosaic_bilinear(img: BayerImage) -> np.ndarray:
    """Cheap bilinear demosaic to (3, h, w) for previews."""
    plane = img.plane[0, 0]
    h, w = plane.shape
    out = np.zeros((3, h, w))
    masks = np.zeros((3, h, w))
    masks[0, 0::2, 0::2] = 1.0
    masks[1, 0::2, 1::2] = 1.0
    masks[1, 1::2, 0::2] = 1.0
    masks[2, 1::2, 1::2] = 1.0
    kern_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0
    kern_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
    for ch, kern in ((0, kern_rb), (1, kern_g), (2, kern_rb)):
        vals = _corr2(plane * masks[ch], kern)
        wts = _corr2(masks[ch], kern)
        out[ch] = vals / np.maximum(wts, 1e-12)
    return np.clip(out, 0.0, 1.0)


def _corr2(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    kh, kw = kern.shape
    pad = np.pad(img, ((kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = np.lib.stride_tricks.sliding_window_view(pad, kern.shape)
    return np.einsum("ijkl,kl->ij", win, kern)


# ---------------------------------------------------------------------------
# dataset directories


@dataclass
class DatasetConfig:
    count: int = 64
    size: int = 80
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    kinds: tuple[str, ...] = SCENE_KINDS

    def validate(self) -> None:
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")
        if self.size < 8 or self.size % 2:
            raise ValueError(f"size must be even and >= 8, got {self.size}")
        for k in self.kinds:
            if k not in SCENE_KINDS:
                raise ValueError(f"unknown scene kind {k!r}")


@dataclass
class Pair:
    pair_id: str
    kind: str
    seed: int
    noise: NoiseModel
    noisy: BayerImage
    clean: BayerImage


_NOISE_SEED_SALT = 977101  # keeps the noise stream apart from scene seeds


def make_dataset(out_dir, cfg: DatasetConfig) -> list[Pair]:
    """Generate pairs under out_dir; rerunning a config is byte-identical."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    rows = []
    for i in range(cfg.count):
        kind = cfg.kinds[i % len(cfg.kinds)]
        seed = cfg.seed + i
        clean = mosaic_rggb(gen_clean_scene(kind, cfg.size, seed))
        noisy = add_noise(clean, cfg.noise, seed + _NOISE_SEED_SALT)
        pid = f"pair{i:04d}"
        save_sbt(out / f"{pid}_clean.sbt", clean.plane)
        save_sbt(out / f"{pid}_noisy.sbt", noisy.plane)
        rows.append([pid, kind, seed, repr(cfg.noise.a), repr(cfg.noise.b)])
        pairs.append(Pair(pid, kind, seed, cfg.noise, noisy, clean))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "kind", "seed", "noise_a", "noise_b"])
        writer.writerows(rows)
    return pairs


def load_dataset(dir_path) -> list[Pair]:
    root = Path(dir_path)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    pairs = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            nm = NoiseModel(float(row["noise_a"]), float(row["noise_b"]))
            noisy = BayerImage(load_sbt(root / f"{row['id']}_noisy.sbt"))
            clean = BayerImage(load_sbt(root / f"{row['id']}_clean.sbt"))
            pairs.append(Pair(row["id"], row["kind"], int(row["seed"]), nm, noisy, clean))
    return pairs
