"""Image quality metric."""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1] (RGB, all channels).

    Both inputs are clamped to [0, 1] first.  Identical images give ``inf``.
    """
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((np.clip(a, 0.0, 1.0) - np.clip(b, 0.0, 1.0)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
