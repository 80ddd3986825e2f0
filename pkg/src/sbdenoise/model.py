"""The denoising network: head, a chain of wavelet bottlenecks, tail.

Layout for packed 4-channel Bayer input x::

    v = relu(conv 3x3, 4 -> F)(x)
    v = dense block (F -> 2F)
    v = relu(conv 3x3, 2F -> F)
    v = bottleneck_1(...(bottleneck_B(v)))      # kind-selectable, residual
    v = dense block (F -> 2F)
    v = conv 3x3, 2F -> 4                       # no activation
    out = v + x                                 # global skip, always on

With all parameters zero the network is exactly the identity (the tail conv
emits zeros and only the global skip survives); that property anchors the
self-ensemble alignment tests.  Initialization is He-normal weights with
zero biases, drawn from one ``numpy.random.default_rng(seed)`` stream in the
fixed parameter enumeration order, so equal configs give bit-identical
models.

Checkpoints are a text manifest (config + bookkeeping), a blank line, then
one SBT1 record per parameter in enumeration order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks as bk
from . import tensor as ts

CHECKPOINT_MAGIC = "sbdenoise-checkpoint-v1"


@dataclass
class ModelConfig:
    kind: str = bk.KIND_SUBBAND  # sdwt | dwt | nodwt
    blocks: int = 2              # bottleneck count B
    filters: int = 16            # trunk width F
    in_channels: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in bk.BOTTLENECK_KINDS:
            raise ValueError(f"kind must be one of {bk.BOTTLENECK_KINDS}, got {self.kind!r}")
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if self.filters < 4 or self.filters % 4:
            raise ValueError(f"filters must be a positive multiple of 4, got {self.filters}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


class Model:
    """Config plus parameter structures; arrays live in the block dataclasses."""

    def __init__(self, cfg: ModelConfig, head_in, head_db, head_out,
                 bottlenecks, tail_db, tail_out):
        self.cfg = cfg
        self.head_in = head_in
        self.head_db = head_db
        self.head_out = head_out
        self.bottlenecks = bottlenecks
        self.tail_db = tail_db
        self.tail_out = tail_out

    def map(self, fn) -> "Model":
        return Model(
            self.cfg,
            self.head_in.map(fn),
            self.head_db.map(fn),
            self.head_out.map(fn),
            [b.map(fn) for b in self.bottlenecks],
            self.tail_db.map(fn),
            self.tail_out.map(fn),
        )

    def named(self, prefix: str = ""):
        yield from self.head_in.named(f"{prefix}head.in")
        yield from self.head_db.named(f"{prefix}head.db")
        yield from self.head_out.named(f"{prefix}head.out")
        for i, b in enumerate(self.bottlenecks):
            yield from b.named(f"{prefix}block{i}")
        yield from self.tail_db.named(f"{prefix}tail.db")
        yield from self.tail_out.named(f"{prefix}tail.out")

    def param_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named())


def init_params(cfg: ModelConfig) -> Model:
    """He-normal weights / zero biases, one rng stream, enumeration order.

    The residual-emitting conv starts at zero so a fresh model is the exact
    identity: training starts at the noisy-input score instead of having to
    first unlearn random residual output (which tends to collapse the whole
    branch to zero and stall there).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    f = cfg.filters
    growth = f // 4
    head_in = bk.he_conv(rng, f, cfg.in_channels, 3)
    head_db = bk.DenseBlockParams.create(rng, f, growth)
    head_out = bk.he_conv(rng, f, head_db.c_out, 3)
    bottlenecks = [bk.BottleneckParams.create(rng, cfg.kind, f) for _ in range(cfg.blocks)]
    tail_db = bk.DenseBlockParams.create(rng, f, growth)
    tail_out = bk.zero_conv(cfg.in_channels, tail_db.c_out, 3)
    return Model(cfg, head_in, head_db, head_out, bottlenecks, tail_db, tail_out)


def zero_params(cfg: ModelConfig) -> Model:
    """Same structure as init_params but all parameters zero (identity model)."""
    return init_params(cfg).map(np.zeros_like)


def model_forward(m: Model, x):
    """Run the network on a packed (n, in_channels, h, w) tensor (or Var).

    h and w must be even: each bottleneck halves spatial dims once
    internally.
    """
    xd = ad.value_of(x)
    if xd.ndim != 4 or xd.shape[1] != m.cfg.in_channels:
        raise ValueError(
            f"model_forward: expected (n, {m.cfg.in_channels}, h, w), got {xd.shape}"
        )
    if xd.shape[2] % 2 or xd.shape[3] % 2:
        raise ValueError(f"model_forward: h, w must be even, got {xd.shape[2]}x{xd.shape[3]}")
    v = ad.relu(ad.conv2d(x, m.head_in.w, m.head_in.b, pad=1))
    v = bk.dense_block_forward(v, m.head_db)
    v = ad.relu(ad.conv2d(v, m.head_out.w, m.head_out.b, pad=1))
    for blk in m.bottlenecks:
        v = bk.bottleneck_forward(v, blk)
    v = bk.dense_block_forward(v, m.tail_db)
    v = ad.conv2d(v, m.tail_out.w, m.tail_out.b, pad=1)
    return ad.add(v, x)


def param_count(m: Model) -> int:
    return bk.param_count(m)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, m: Model, epoch: int = 0, extra: dict | None = None) -> None:
    cfg = m.cfg
    lines = [
        CHECKPOINT_MAGIC,
        f"kind={cfg.kind}",
        f"blocks={cfg.blocks}",
        f"filters={cfg.filters}",
        f"in_channels={cfg.in_channels}",
        f"seed={cfg.seed}",
        f"epoch={epoch}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    blob = bytearray(("\n".join(lines) + "\n\n").encode("ascii"))
    for _, arr in m.named():
        blob += ts.sbt_bytes(_as4d(arr))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, manifest dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    split = data.find(b"\n\n")
    if split < 0:
        raise ValueError(f"checkpoint {path}: missing manifest terminator")
    head = data[:split].decode("ascii").splitlines()
    if not head or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"checkpoint {path}: bad magic line")
    manifest: dict[str, str] = {}
    for line in head[1:]:
        if line and "=" in line:
            k, v = line.split("=", 1)
            manifest[k] = v
    cfg = ModelConfig(
        kind=manifest["kind"],
        blocks=int(manifest["blocks"]),
        filters=int(manifest["filters"]),
        in_channels=int(manifest["in_channels"]),
        seed=int(manifest["seed"]),
    )
    m = init_params(cfg)
    offset = split + 2
    for name, arr in m.named():
        rec, offset = ts.sbt_from_bytes(data, offset)
        want = _as4d(arr).shape
        if rec.shape != want:
            raise ValueError(f"checkpoint {path}: parameter {name} has shape "
                             f"{rec.shape}, expected {want}")
        arr[...] = rec.reshape(arr.shape)
    if offset != len(data):
        raise ValueError(f"checkpoint {path}: {len(data) - offset} trailing bytes")
    return m, manifest


def _as4d(arr: np.ndarray) -> np.ndarray:
    # SBT1 stores 4-D records; biases (c,) ride along as (1, c, 1, 1).
    if arr.ndim == 4:
        return arr
    if arr.ndim == 1:
        return arr.reshape(1, -1, 1, 1)
    raise ValueError(f"cannot serialize parameter of ndim {arr.ndim}")
