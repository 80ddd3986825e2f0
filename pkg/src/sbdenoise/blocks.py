"""Dense convolution blocks and the three swappable wavelet bottlenecks.

A dense block is a stack of 3x3 same-padded conv+ReLU layers where each
layer sees the concatenation of the block input and all previous layer
outputs; the block returns that final concatenation (input included), so a
block with input channels c and L layers of growth g emits c + L*g channels.
There is no residual sum and no fusion conv inside the block itself.

Three bottlenecks wrap dense blocks around a 2x halving transform, all with
the same outer contract (x -> same shape, residual added):

    sdwt   Haar split, one dense block per sub-band (independent weights),
           inverse Haar on the four equal-width outputs, 3x3 fusion conv,
           plus x.
    dwt    Haar split, bands concatenated to 4c channels, one dense block,
           1x1 conv back to exactly 4c, split into four bands, inverse
           Haar, 3x3 fusion conv, plus x.
    nodwt  space-to-depth (r=2) to 4c, one dense block, 1x1 conv to 4c,
           depth-to-space, 3x3 fusion conv, plus x.

``solve_growth`` picks the dense-block growth of the dwt/nodwt variants so
their parameter counts track the sdwt variant at the same width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import transforms as tf
from .autodiff import value_of
from .transforms import SubBands

KIND_SUBBAND = "sdwt"
KIND_CONCAT = "dwt"
KIND_S2D = "nodwt"
BOTTLENECK_KINDS = (KIND_SUBBAND, KIND_CONCAT, KIND_S2D)


@dataclass
class Conv:
    """One convolution's parameters: w (co, ci, kh, kw) and b (co,)."""

    w: object
    b: object

    def map(self, fn):
        return Conv(fn(self.w), fn(self.b))

    def named(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def he_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Conv:
    """He-normal weights (std = sqrt(2 / fan_in)), zero bias."""
    std = np.sqrt(2.0 / (c_in * k * k))
    w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    return Conv(w, np.zeros(c_out))


def zero_conv(c_out: int, c_in: int, k: int) -> Conv:
    return Conv(np.zeros((c_out, c_in, k, k)), np.zeros(c_out))


class DenseBlockParams:
    """Parameters of one dense block: ``layers[i]`` maps c + i*g -> g channels."""

    def __init__(self, c_in: int, growth: int, layers: list[Conv]):
        self.c_in = c_in
        self.growth = growth
        self.layers = layers

    @classmethod
    def create(cls, rng, c_in: int, growth: int, n_layers: int = 4, k: int = 3):
        if growth < 1:
            raise ValueError(f"dense block growth must be >= 1, got {growth}")
        layers = [he_conv(rng, growth, c_in + i * growth, k) for i in range(n_layers)]
        return cls(c_in, growth, layers)

    @property
    def c_out(self) -> int:
        return self.c_in + len(self.layers) * self.growth

    def map(self, fn):
        return DenseBlockParams(self.c_in, self.growth, [c.map(fn) for c in self.layers])

    def named(self, prefix: str = "db"):
        for i, conv in enumerate(self.layers):
            yield from conv.named(f"{prefix}.conv{i}")


def dense_block_forward(x, p: DenseBlockParams):
    """Run a dense block; output concatenates x with every layer's output."""
    c = value_of(x).shape[1]
    if c != p.c_in:
        raise ValueError(f"dense block expects {p.c_in} channels, got {c}")
    feats = x
    for conv in p.layers:
        k = value_of(conv.w).shape[2]
        y = ad.relu(ad.conv2d(feats, conv.w, conv.b, pad=k // 2))
        feats = ad.concat_channels([feats, y])
    return feats


class BottleneckParams:
    """Parameters of one bottleneck; ``kind`` selects the forward routing."""

    def __init__(self, kind: str, channels: int, band_blocks=None, block=None,
                 narrow=None, fuse: Conv | None = None):
        if kind not in BOTTLENECK_KINDS:
            raise ValueError(f"unknown bottleneck kind {kind!r}")
        self.kind = kind
        self.channels = channels
        self.band_blocks = band_blocks  # sdwt: list of 4 DenseBlockParams
        self.block = block              # dwt/nodwt: one DenseBlockParams
        self.narrow = narrow            # dwt/nodwt: 1x1 Conv back to 4c
        self.fuse = fuse

    @classmethod
    def create(cls, rng, kind: str, channels: int, growth: int | None = None,
               n_layers: int = 4):
        c = channels
        if kind == KIND_SUBBAND:
            if growth is None:
                if c % 4:
                    raise ValueError(f"sdwt default growth needs channels % 4 == 0, got {c}")
                growth = c // 4
            bands = [DenseBlockParams.create(rng, c, growth, n_layers) for _ in range(4)]
            fuse = he_conv(rng, c, bands[0].c_out, 3)
            return cls(kind, c, band_blocks=bands, fuse=fuse)
        if growth is None:
            growth = solve_growth(kind, c, n_layers)
        block = DenseBlockParams.create(rng, 4 * c, growth, n_layers)
        narrow = he_conv(rng, 4 * c, block.c_out, 1)
        fuse = he_conv(rng, c, c, 3)
        return cls(kind, c, block=block, narrow=narrow, fuse=fuse)

    def map(self, fn):
        return BottleneckParams(
            self.kind,
            self.channels,
            band_blocks=[b.map(fn) for b in self.band_blocks] if self.band_blocks else None,
            block=self.block.map(fn) if self.block else None,
            narrow=self.narrow.map(fn) if self.narrow else None,
            fuse=self.fuse.map(fn),
        )

    def named(self, prefix: str = "bottleneck"):
        if self.kind == KIND_SUBBAND:
            for name, blk in zip(SubBands._fields, self.band_blocks):
                yield from blk.named(f"{prefix}.{name}")
        else:
            yield from self.block.named(f"{prefix}.db")
            yield from self.narrow.named(f"{prefix}.narrow")
        yield from self.fuse.named(f"{prefix}.fuse")


def subband_block_forward(x, p: BottleneckParams):
    """Per-sub-band route: independent dense blocks on ll/lh/hl/hh."""
    widths = {blk.c_out for blk in p.band_blocks}
    if len(widths) != 1:
        raise ValueError(f"band blocks emit unequal channel counts {sorted(widths)}")
    bands = tf.dwt2_haar(x)
    outs = [dense_block_forward(band, blk) for band, blk in zip(bands, p.band_blocks)]
    y = tf.idwt2_haar(SubBands(*outs))
    y = ad.conv2d(y, p.fuse.w, p.fuse.b, pad=1)
    return ad.add(y, x)


def concat_dwt_block_forward(x, p: BottleneckParams):
    """Concatenated-band route: one dense block over the 4c band stack."""
    c = p.channels
    bands = tf.dwt2_haar(x)
    feats = ad.concat_channels(list(bands))
    feats = dense_block_forward(feats, p.block)
    feats = ad.conv2d(feats, p.narrow.w, p.narrow.b)  # 1x1 back to 4c
    parts = ad.split_channels(feats, [c, c, c, c])
    y = tf.idwt2_haar(SubBands(*parts))
    y = ad.conv2d(y, p.fuse.w, p.fuse.b, pad=1)
    return ad.add(y, x)


def s2d_block_forward(x, p: BottleneckParams):
    """Pixel-shuffle route: same shape arithmetic as dwt but no wavelet."""
    z = tf.space_to_depth(x, 2)
    feats = dense_block_forward(z, p.block)
    feats = ad.conv2d(feats, p.narrow.w, p.narrow.b)
    y = tf.depth_to_space(feats, 2)
    y = ad.conv2d(y, p.fuse.w, p.fuse.b, pad=1)
    return ad.add(y, x)


_FORWARDS = {
    KIND_SUBBAND: subband_block_forward,
    KIND_CONCAT: concat_dwt_block_forward,
    KIND_S2D: s2d_block_forward,
}


def bottleneck_forward(x, p: BottleneckParams):
    return _FORWARDS[p.kind](x, p)


def param_count(p) -> int:
    """Total scalar parameter count of anything exposing ``named()``."""
    return int(sum(value_of(v).size for _, v in p.named("")))


def solve_growth(kind: str, channels: int, n_layers: int = 4) -> int:
    """Growth for the dwt/nodwt dense block that best matches sdwt's size.

    Searches integer growths and minimizes the absolute parameter-count gap
    against the sdwt bottleneck at the same width (ties go to the smaller
    growth).  Counting uses throwaway zero parameter structures so there is
    exactly one definition of what counts.
    """
    if kind == KIND_SUBBAND:
        return channels // 4
    if kind not in BOTTLENECK_KINDS:
        raise ValueError(f"unknown bottleneck kind {kind!r}")
    target = param_count(_zero_bottleneck(KIND_SUBBAND, channels, channels // 4, n_layers))
    best_g, best_gap = 1, None
    for g in range(1, 4 * channels + 1):
        count = param_count(_zero_bottleneck(kind, channels, g, n_layers))
        gap = abs(count - target)
        if best_gap is None or gap < best_gap:
            best_g, best_gap = g, gap
        if count >= target:  # counts grow with g, nothing better past the target
            break
    return best_g


def _zero_bottleneck(kind: str, channels: int, growth: int, n_layers: int):
    c = channels
    if kind == KIND_SUBBAND:
        bands = [
            DenseBlockParams(c, growth, [zero_conv(growth, c + i * growth, 3) for i in range(n_layers)])
            for _ in range(4)
        ]
        return BottleneckParams(kind, c, band_blocks=bands,
                                fuse=zero_conv(c, bands[0].c_out, 3))
    block = DenseBlockParams(4 * c, growth,
                             [zero_conv(growth, 4 * c + i * growth, 3) for i in range(n_layers)])
    return BottleneckParams(kind, c, block=block,
                            narrow=zero_conv(4 * c, block.c_out, 1),
                            fuse=zero_conv(c, c, 3))
