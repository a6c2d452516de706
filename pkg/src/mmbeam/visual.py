"""Scaled-down multi-axis vision transformer (MaxViT-style) image encoder.

Layout is channels-last throughout: a feature map is ``(B, H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, ones, xavier_uniform, zeros
from .tensor import Tensor


@dataclass
class VisualEncoderConfig:
    image_size: int = 32
    stem_channels: int = 32
    stages: int = 2
    blocks_per_stage: int = 1
    window: int = 4
    grid: int = 4
    head_dim: int = 32
    expansion: int = 4
    se_ratio: float = 0.25
    ffn_mult: int = 4

    def __post_init__(self):
        if self.image_size % 2:
            raise ValidationError(f"image_size {self.image_size} must be even")
        if self.stem_channels % self.head_dim:
            raise ValidationError(
                f"stem_channels {self.stem_channels} must be a multiple of head_dim {self.head_dim}")
        for s, side in enumerate(self.stage_sides()):
            if side < 1 or side % self.window or side % self.grid:
                raise ValidationError(
                    f"stage {s} feature side {side} is not divisible by window {self.window} "
                    f"and grid {self.grid}; pick image_size divisible by "
                    f"{max(self.window, self.grid) * 2 ** (self.stages + 1)}")

    def stage_sides(self) -> list[int]:
        # stem halves once, every stage halves again
        return [self.image_size // 2 ** (s + 2) for s in range(self.stages)]

    def stage_channels(self) -> list[int]:
        return [self.stem_channels * 2 ** s for s in range(self.stages)]

    @property
    def out_dim(self) -> int:
        return self.stem_channels * 2 ** (self.stages - 1)


# ---------------------------------------------------------------------------
# partitions


def _check_divisible(fm, size, what):
    _, h, w, _ = fm.shape
    if size < 1 or h % size or w % size:
        raise DimensionError(f"{what} size {size} does not divide feature map {h}x{w}")


def window_partition(fm, w: int) -> Tensor:
    """(B, H, W, C) -> (B * H/w * W/w, w*w, C): contiguous non-overlapping windows."""
    fm = T.as_tensor(fm)
    _check_divisible(fm, w, "window")
    b, h, wd, c = fm.shape
    x = fm.reshape(b, h // w, w, wd // w, w, c)
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return x.reshape(b * (h // w) * (wd // w), w * w, c)


def window_unpartition(x, w: int, batch: int, height: int, width: int) -> Tensor:
    x = T.as_tensor(x)
    c = x.shape[-1]
    x = x.reshape(batch, height // w, width // w, w, w, c)
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    return x.reshape(batch, height, width, c)


def grid_partition(fm, g: int) -> Tensor:
    """(B, H, W, C) -> (B * H/g * W/g, g*g, C).

    Each group collects the g*g pixels spaced H/g (resp. W/g) apart, so one
    group spans the whole map.
    """
    fm = T.as_tensor(fm)
    _check_divisible(fm, g, "grid")
    b, h, wd, c = fm.shape
    x = fm.reshape(b, g, h // g, g, wd // g, c)
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return x.reshape(b * (h // g) * (wd // g), g * g, c)


def grid_unpartition(x, g: int, batch: int, height: int, width: int) -> Tensor:
    x = T.as_tensor(x)
    c = x.shape[-1]
    x = x.reshape(batch, height // g, width // g, g, g, c)
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))
    return x.reshape(batch, height, width, c)


# ---------------------------------------------------------------------------
# building blocks


class ConvStem(Module):
    """3x3 stride-2 same-padded convolution."""

    def __init__(self, rng, c_in: int, c_out: int):
        self.weight = xavier_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, 9 * c_out)
        self.bias = zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ValidationError(f"stem input {x.shape[1]}x{x.shape[2]} must have even sides")
        return T.conv2d(x, self.weight, self.bias, stride=2, padding=1)


class InstanceNorm(Module):
    """Per-sample, per-channel normalization over spatial positions."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gain = ones((channels,))
        self.bias = zeros((channels,))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.standardize(x, (1, 2), self.eps) * self.gain + self.bias


class PointwiseConv(Module):
    def __init__(self, rng, c_in: int, c_out: int):
        self.weight = xavier_uniform(rng, (c_in, c_out), c_in, c_out)
        self.bias = zeros((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class SqueezeExcite(Module):
    def __init__(self, rng, channels: int, reduced: int):
        self.reduce = Linear(rng, channels, reduced)
        self.expand = Linear(rng, reduced, channels)

    def gate(self, x: Tensor) -> Tensor:
        pooled = x.mean(axis=(1, 2))
        return T.sigmoid(self.expand(T.gelu(self.reduce(pooled))))

    def forward(self, x: Tensor) -> Tensor:
        g = self.gate(x)
        return x * g.reshape(g.shape[0], 1, 1, g.shape[1])


class MBConv(Module):
    """Inverted residual: expand 1x1, depthwise 3x3, squeeze-excite, project 1x1."""

    def __init__(self, rng, c_in: int, c_out: int, stride: int, expansion: int = 4,
                 se_ratio: float = 0.25):
        if stride not in (1, 2):
            raise ValidationError(f"MBConv stride must be 1 or 2, got {stride}")
        hidden = c_in * expansion
        self.stride = stride
        self.residual = stride == 1 and c_in == c_out
        self.pre_norm = InstanceNorm(c_in)
        self.expand = PointwiseConv(rng, c_in, hidden)
        self.norm1 = InstanceNorm(hidden)
        self.dw_weight = xavier_uniform(rng, (3, 3, hidden), 9, 9)
        self.norm2 = InstanceNorm(hidden)
        self.se = SqueezeExcite(rng, hidden, max(1, int(c_in * se_ratio)))
        self.project = PointwiseConv(rng, hidden, c_out)

    def forward(self, x: Tensor) -> Tensor:
        h = self.expand(self.pre_norm(x))
        h = T.gelu(self.norm1(h))
        h = T.depthwise_conv2d(h, self.dw_weight, stride=self.stride, padding=1)
        h = T.gelu(self.norm2(h))
        h = self.project(self.se(h))
        return x + h if self.residual else h


class AxisAttention(Module):
    """Pre-norm attention over window or grid groups, followed by a pre-norm FFN."""

    def __init__(self, rng, channels: int, size: int, mode: str, head_dim: int, ffn_mult: int):
        if mode not in ("window", "grid"):
            raise ValueError(f"unknown attention mode {mode!r}")
        if channels % head_dim:
            raise DimensionError(f"{channels} channels not divisible by head width {head_dim}")
        self.mode = mode
        self.size = size
        self.norm1 = LayerNorm(channels)
        self.attn = MultiHeadAttention(rng, channels, channels // head_dim)
        self.norm2 = LayerNorm(channels)
        self.ffn = FeedForward(rng, channels, ffn_mult * channels, T.gelu)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, _ = x.shape
        part, unpart = ((window_partition, window_unpartition) if self.mode == "window"
                        else (grid_partition, grid_unpartition))
        y = self.attn(part(self.norm1(x), self.size))
        x = x + unpart(y, self.size, b, h, w)
        return x + self.ffn(self.norm2(x))


class MaxViTBlock(Module):
    def __init__(self, rng, c_in: int, c_out: int, stride: int, cfg: VisualEncoderConfig):
        self.mbconv = MBConv(rng, c_in, c_out, stride, cfg.expansion, cfg.se_ratio)
        self.block_attn = AxisAttention(rng, c_out, cfg.window, "window", cfg.head_dim, cfg.ffn_mult)
        self.grid_attn = AxisAttention(rng, c_out, cfg.grid, "grid", cfg.head_dim, cfg.ffn_mult)

    def forward(self, x: Tensor) -> Tensor:
        return self.grid_attn(self.block_attn(self.mbconv(x)))


class VisualEncoder(Module):
    def __init__(self, config: VisualEncoderConfig, rng: np.random.Generator):
        self.config = config
        self.stem = ConvStem(rng, 3, config.stem_channels)
        blocks = []
        c_prev = config.stem_channels
        for c in config.stage_channels():
            for i in range(config.blocks_per_stage):
                blocks.append(MaxViTBlock(rng, c_prev, c, 2 if i == 0 else 1, config))
                c_prev = c
        self.blocks = blocks

    @property
    def out_dim(self) -> int:
        return self.config.out_dim

    def attention_modules(self) -> list[AxisAttention]:
        return [a for blk in self.blocks for a in (blk.block_attn, blk.grid_attn)]

    def features(self, images: Tensor) -> list[Tensor]:
        """Feature map after the stem and after every block."""
        x = self.stem(T.as_tensor(images))
        maps = [x]
        for blk in self.blocks:
            x = blk(x)
            maps.append(x)
        return maps

    def forward(self, images: Tensor) -> Tensor:
        """(B, H, W, 3) standardized images -> (B, out_dim) pooled features."""
        return self.features(images)[-1].mean(axis=(1, 2))
