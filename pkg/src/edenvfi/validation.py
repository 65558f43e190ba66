"""Input validation for array-level entry points."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def check_frames(X, frames: int = 4) -> np.ndarray:
    """Validate a batch of frame sequences ``[n x frames x 3 x H x W]`` and return it as float32.

    A single sequence ``[frames x 3 x H x W]`` is promoted to a batch of one.
    """
    X = np.asarray(X)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5 or X.shape[1] != frames or X.shape[2] != 3:
        raise DimensionError(f"expected frames of shape [n x {frames} x 3 x H x W], got {X.shape}")
    if X.shape[0] == 0:
        raise DimensionError("expected at least one sequence")
    if not np.issubdtype(X.dtype, np.number):
        raise DimensionError(f"frames must be numeric, got dtype {X.dtype}")
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("frames contain NaN or infinite values")
    return X


def check_targets(y, X: np.ndarray) -> np.ndarray:
    """Validate midpoint targets ``[n x 3 x H x W]`` against the frames ``X``."""
    y = np.asarray(y)
    if y.ndim == 3:
        y = y[None]
    expected = (X.shape[0], *X.shape[2:])
    if y.shape != expected:
        raise DimensionError(f"expected targets of shape {expected}, got {y.shape}")
    y = y.astype(np.float32, copy=False)
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain NaN or infinite values")
    return y
