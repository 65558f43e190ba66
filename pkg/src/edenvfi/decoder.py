"""Convolutional decoder with additive three-way skip fusion."""

from __future__ import annotations

import numpy as np

from . import nn
from .encoders import CnnEncoderState, ConvBlock, PvtFeatures
from .errors import DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor, add


def fuse_level(alpha: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    """``phi = alpha + beta + gamma`` (CNN, transformer and upsampled decoder features)."""
    for name, t in (("pvt", beta), ("decoder", gamma)):
        if t.shape != alpha.shape:
            raise DimensionError(f"fusion: {name} features {t.shape} do not match cnn features {alpha.shape}")
    return add(add(alpha, beta), gamma)


class UpsampleBlock(Module):
    """x2 bilinear resize, 3x3 convolution, leaky ReLU."""

    def __init__(self, cin: int, cout: int, slope: float = 0.1, rng=None, dtype=np.float32):
        self.conv = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        _, h, w = x.shape
        return nn.leaky_relu(self.conv(nn.bilinear_resize(x, 2 * h, 2 * w)), self.slope)


class Decoder(Module):
    """conv block -> upsample -> fuse at /8 -> conv block -> upsample -> fuse at /4."""

    def __init__(self, c64: int = 64, c128: int = 128, slope: float = 0.1, rng=None, dtype=np.float32):
        self.block1 = ConvBlock(c128, c128, slope, rng=rng, dtype=dtype)
        self.up1 = UpsampleBlock(c128, c128, slope, rng=rng, dtype=dtype)
        self.block2 = ConvBlock(c128, c128, slope, rng=rng, dtype=dtype)
        self.up2 = UpsampleBlock(c128, c64, slope, rng=rng, dtype=dtype)

    def levels(self, rho: Tensor, cnn: CnnEncoderState, pvt: PvtFeatures) -> tuple[Tensor, Tensor]:
        """Return ``(phi128, phi64)``."""
        gamma128 = self.up1(self.block1(rho))
        phi128 = fuse_level(cnn.level128, pvt.beta128, gamma128)
        gamma64 = self.up2(self.block2(phi128))
        return phi128, fuse_level(cnn.level64, pvt.beta64, gamma64)

    def forward(self, rho: Tensor, cnn: CnnEncoderState, pvt: PvtFeatures) -> Tensor:
        return self.levels(rho, cnn, pvt)[1]
