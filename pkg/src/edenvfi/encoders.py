"""Pyramid vision transformer encoder and convolutional encoder.

Both encoders consume the four input frames concatenated along channels
(12 channels for RGB).  Transformer features live as token matrices
``[N x d]`` inside a stage and are reshaped to ``[d x h x w]`` maps at the
stage boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError
from .layers import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module
from .tensor import Tensor, concat, matmul, reshape, transpose


@dataclass(frozen=True)
class PvtStageConfig:
    embed_dim: int
    depth: int
    sr_ratio: int
    num_heads: int = 1
    mlp_ratio: int = 4
    patch_stride: int = 4

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.depth < 0 or self.sr_ratio < 1 or self.patch_stride < 1 or self.mlp_ratio < 1:
            raise ConfigError(f"invalid stage config {self}")


def to_tokens(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return transpose(reshape(x, (c, h * w)), (1, 0))


def to_grid(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    h, w = grid
    n, c = tokens.shape
    if n != h * w:
        raise DimensionError(f"{n} tokens do not fill a {h}x{w} grid")
    return reshape(transpose(tokens, (1, 0)), (c, h, w))


class PatchEmbed(Module):
    """Non-overlapping strided convolution (kernel == stride) followed by layer norm."""

    def __init__(self, cin: int, dim: int, stride: int, rng=None, dtype=np.float32):
        self.proj = Conv2d(cin, dim, kernel=stride, stride=stride, padding=0, rng=rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.stride = stride

    def forward(self, x: Tensor) -> tuple[Tensor, tuple[int, int]]:
        _, h, w = x.shape
        s = self.stride
        if h % s or w % s:
            raise DimensionError(f"patch embed: spatial size {h}x{w} not divisible by stride {s}")
        y = self.proj(x)
        grid = (h // s, w // s)
        return self.norm(to_tokens(y)), grid


class SRAttention(Module):
    """Multi-head attention whose keys and values come from a spatially reduced token grid."""

    def __init__(self, dim: int, num_heads: int, sr_ratio: int, rng=None, dtype=np.float32):
        self.q = Linear(dim, dim, rng=rng, dtype=dtype)
        self.kv = Linear(dim, 2 * dim, rng=rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)
        self.sr = Conv2d(dim, dim, kernel=sr_ratio, stride=sr_ratio, padding=0, rng=rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.dim = dim
        self.num_heads = num_heads
        self.sr_ratio = sr_ratio
        self.scale = 1.0 / math.sqrt(dim // num_heads)

    def forward(self, tokens: Tensor, grid: tuple[int, int], return_weights: bool = False):
        """Attend from all ``N`` tokens to the ``N / sr_ratio**2`` reduced tokens.

        With ``return_weights`` the per-head ``[N x M]`` attention matrices are
        returned alongside the output.
        """
        h, w = grid
        r = self.sr_ratio
        if h % r or w % r:
            raise DimensionError(f"sr_ratio {r} does not divide token grid {h}x{w}")
        d, nh = self.dim, self.num_heads
        hd = d // nh
        q = self.q(tokens)
        reduced = self.norm(to_tokens(self.sr(to_grid(tokens, grid))))
        kv = self.kv(reduced)
        heads, weights = [], []
        for i in range(nh):
            qh = q[:, i * hd:(i + 1) * hd]
            kh = kv[:, i * hd:(i + 1) * hd]
            vh = kv[:, d + i * hd:d + (i + 1) * hd]
            attn = nn.softmax(matmul(qh, transpose(kh, (1, 0))) * self.scale)
            weights.append(attn)
            heads.append(matmul(attn, vh))
        out = self.proj(heads[0] if nh == 1 else concat(heads, axis=1))
        return (out, weights) if return_weights else out


class Mlp(Module):
    """linear -> GELU -> depthwise 3x3 conv over the token grid -> linear."""

    def __init__(self, dim: int, hidden: int, rng=None, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.dwconv = DepthwiseConv2d(hidden, 3, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, tokens: Tensor, grid: tuple[int, int]) -> Tensor:
        x = nn.gelu(self.fc1(tokens))
        x = to_tokens(self.dwconv(to_grid(x, grid)))
        return self.fc2(x)


class PvtBlock(Module):
    def __init__(self, cfg: PvtStageConfig, rng=None, dtype=np.float32):
        d = cfg.embed_dim
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.attn = SRAttention(d, cfg.num_heads, cfg.sr_ratio, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(d, dtype=dtype)
        self.mlp = Mlp(d, cfg.mlp_ratio * d, rng=rng, dtype=dtype)

    def forward(self, tokens: Tensor, grid: tuple[int, int]) -> Tensor:
        tokens = tokens + self.attn(self.norm1(tokens), grid)
        return tokens + self.mlp(self.norm2(tokens), grid)


class PvtStage(Module):
    """Patch embedding, ``depth`` transformer blocks and a closing layer norm."""

    def __init__(self, cin: int, cfg: PvtStageConfig, rng=None, dtype=np.float32):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cin, cfg.embed_dim, cfg.patch_stride, rng=rng, dtype=dtype)
        self.blocks = [PvtBlock(cfg, rng=rng, dtype=dtype) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.embed_dim, dtype=dtype) if cfg.depth else None

    def forward(self, x: Tensor) -> Tensor:
        tokens, grid = self.patch_embed(x)
        for blk in self.blocks:
            tokens = blk(tokens, grid)
        if self.norm is not None:
            tokens = self.norm(tokens)
        return to_grid(tokens, grid)


@dataclass
class PvtFeatures:
    beta64: Tensor
    beta128: Tensor


class PvtEncoder(Module):
    """Two-stage pyramid vision transformer producing maps at 1/4 and 1/8 resolution."""

    def __init__(self, stages: tuple[PvtStageConfig, PvtStageConfig], in_channels: int = 12, rng=None,
                 dtype=np.float32):
        s1, s2 = stages
        self.in_channels = in_channels
        self.stage1 = PvtStage(in_channels, s1, rng=rng, dtype=dtype)
        self.stage2 = PvtStage(s1.embed_dim, s2, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> PvtFeatures:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise DimensionError(f"PVT encoder expects {self.in_channels} input channels, got shape {x.shape}")
        beta64 = self.stage1(x)
        beta128 = self.stage2(beta64)
        return PvtFeatures(beta64, beta128)


class ConvBlock(Module):
    """Two 3x3 convolutions, each followed by a leaky ReLU."""

    def __init__(self, cin: int, cout: int, slope: float = 0.1, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng=rng, dtype=dtype)
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        x = nn.leaky_relu(self.conv1(x), self.slope)
        return nn.leaky_relu(self.conv2(x), self.slope)


@dataclass
class CnnEncoderState:
    level32: Tensor
    level64: Tensor
    level128: Tensor
    rho: Tensor


class CnnEncoder(Module):
    """Three conv blocks separated by average pools of stride 4, 2 and 2."""

    def __init__(self, in_channels: int = 12, channels=(32, 64, 128), slope: float = 0.1, rng=None,
                 dtype=np.float32):
        c1, c2, c3 = channels
        self.in_channels = in_channels
        self.block1 = ConvBlock(in_channels, c1, slope, rng=rng, dtype=dtype)
        self.block2 = ConvBlock(c1, c2, slope, rng=rng, dtype=dtype)
        self.block3 = ConvBlock(c2, c3, slope, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> CnnEncoderState:
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise DimensionError(f"CNN encoder expects {self.in_channels} input channels, got shape {x.shape}")
        if x.shape[1] % 16 or x.shape[2] % 16:
            raise DimensionError(f"CNN encoder needs H, W divisible by 16, got {x.shape[1]}x{x.shape[2]}")
        l32 = self.block1(x)
        l64 = self.block2(nn.avg_pool2d(l32, 4))
        l128 = self.block3(nn.avg_pool2d(l64, 2))
        return CnnEncoderState(l32, l64, l128, nn.avg_pool2d(l128, 2))
