"""Kernel generation and the deformable separable convolution that renders the output frame.

For every output pixel ``(x, y)``, input frame ``i`` and kernel tap
``(u, v)`` of an ``n x n`` window (``n = 5`` by default)::

    weight = k_v[i][u] * k_h[i][v]
    px     = x + (v - n//2) + off_x[i][n*u + v]
    py     = y + (u - n//2) + off_y[i][n*u + v]
    out   += weight * mask[i][n*u + v] * sample(frame_i, px, py)

followed by ``out += bias``.  ``sample`` is clamped bilinear interpolation,
the same convention as :func:`edenvfi.nn.bilinear_sample`.  All maps are
evaluated at the output pixel, so the per-frame contributions can be
accumulated independently.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import nn
from .errors import DimensionError
from .layers import Conv2d, Module
from .tensor import Tensor, _result, check_dtypes, memory

# Prefer OpenMP / workqueue: an outdated TBB only produces a warning and a fallback.
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@numba.njit(cache=True)
def _coord(p, n):
    inside = p >= 0.0 and p <= n - 1.0
    pc = min(max(p, 0.0), n - 1.0)
    i0 = int(np.floor(pc))
    if n > 1 and i0 > n - 2:
        i0 = n - 2
    i1 = min(i0 + 1, n - 1)
    return i0, i1, pc - i0, inside


@numba.njit(parallel=True, cache=True)
def _edsc_forward(frames, kh, kv, ox, oy, mask, out):
    nf, nc, h, w = frames.shape
    n = kh.shape[1]
    r = n // 2
    for y in numba.prange(h):
        for x in range(w):
            for i in range(nf):
                for u in range(n):
                    for v in range(n):
                        t = u * n + v
                        wgt = kv[i, u, y, x] * kh[i, v, y, x] * mask[i, t, y, x]
                        x0, x1, fx, _ = _coord(x + (v - r) + ox[i, t, y, x], w)
                        y0, y1, fy, _ = _coord(y + (u - r) + oy[i, t, y, x], h)
                        for c in range(nc):
                            top = (1.0 - fx) * frames[i, c, y0, x0] + fx * frames[i, c, y0, x1]
                            bot = (1.0 - fx) * frames[i, c, y1, x0] + fx * frames[i, c, y1, x1]
                            out[c, y, x] += wgt * ((1.0 - fy) * top + fy * bot)


@numba.njit(cache=True)
def _edsc_backward(g, frames, kh, kv, ox, oy, mask, gframes, gkh, gkv, gox, goy, gmask):
    nf, nc, h, w = frames.shape
    n = kh.shape[1]
    r = n // 2
    for y in range(h):
        for x in range(w):
            for i in range(nf):
                for u in range(n):
                    for v in range(n):
                        t = u * n + v
                        sep = kv[i, u, y, x] * kh[i, v, y, x]
                        m = mask[i, t, y, x]
                        wgt = sep * m
                        x0, x1, fx, in_x = _coord(x + (v - r) + ox[i, t, y, x], w)
                        y0, y1, fy, in_y = _coord(y + (u - r) + oy[i, t, y, x], h)
                        sval = 0.0
                        sdx = 0.0
                        sdy = 0.0
                        for c in range(nc):
                            f00 = frames[i, c, y0, x0]
                            f01 = frames[i, c, y0, x1]
                            f10 = frames[i, c, y1, x0]
                            f11 = frames[i, c, y1, x1]
                            top = (1.0 - fx) * f00 + fx * f01
                            bot = (1.0 - fx) * f10 + fx * f11
                            gc = g[c, y, x]
                            sval += gc * ((1.0 - fy) * top + fy * bot)
                            sdx += gc * ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10))
                            sdy += gc * (bot - top)
                            a = gc * wgt
                            gframes[i, c, y0, x0] += a * (1.0 - fy) * (1.0 - fx)
                            gframes[i, c, y0, x1] += a * (1.0 - fy) * fx
                            gframes[i, c, y1, x0] += a * fy * (1.0 - fx)
                            gframes[i, c, y1, x1] += a * fy * fx
                        gmask[i, t, y, x] = sep * sval
                        gkv[i, u, y, x] += kh[i, v, y, x] * m * sval
                        gkh[i, v, y, x] += kv[i, u, y, x] * m * sval
                        gox[i, t, y, x] = wgt * sdx if in_x else 0.0
                        goy[i, t, y, x] = wgt * sdy if in_y else 0.0


def edsc_accumulate(frames: np.ndarray, kh: np.ndarray, kv: np.ndarray, ox: np.ndarray,
                    oy: np.ndarray, mask: np.ndarray, out: np.ndarray) -> None:
    """Add the (bias-free) contribution of ``frames [F x C x H x W]`` into ``out`` in place."""
    _edsc_forward(frames, kh, kv, ox, oy, mask, out)


@dataclass
class SynthesisMaps:
    """Per-frame kernels/offsets/masks (lists indexed by frame) and the shared bias residual."""

    k_h: list[Tensor]
    k_v: list[Tensor]
    off_x: list[Tensor]
    off_y: list[Tensor]
    mask: list[Tensor]
    bias: Tensor

    @property
    def kernel_size(self) -> int:
        return self.k_h[0].shape[0]

    def tensors(self) -> list[Tensor]:
        return [*self.k_h, *self.k_v, *self.off_x, *self.off_y, *self.mask, self.bias]


def _check_maps(frames: Sequence[Tensor], maps: SynthesisMaps) -> None:
    nf = len(frames)
    c, h, w = frames[0].shape
    n = maps.kernel_size
    for f in frames:
        if f.shape != (c, h, w):
            raise DimensionError(f"frames differ in shape: {f.shape} vs {(c, h, w)}")
    for name, group, ch in (("k_h", maps.k_h, n), ("k_v", maps.k_v, n), ("off_x", maps.off_x, n * n),
                            ("off_y", maps.off_y, n * n), ("mask", maps.mask, n * n)):
        if len(group) != nf:
            raise DimensionError(f"{name}: {len(group)} maps for {nf} frames")
        for t in group:
            if t.shape != (ch, h, w):
                raise DimensionError(f"{name}: map shape {t.shape}, expected {(ch, h, w)}")
    if maps.bias.shape != (c, h, w):
        raise DimensionError(f"bias shape {maps.bias.shape}, expected {(c, h, w)}")


def edsc_apply(frames: Sequence[Tensor], maps: SynthesisMaps) -> Tensor:
    """Render the output frame from ``frames`` (each ``[C x H x W]``) with per-pixel deformable separable kernels."""
    _check_maps(frames, maps)
    inputs = [*frames, *maps.tensors()]
    check_dtypes(*inputs)
    nf = len(frames)
    fr = np.stack([f.data for f in frames])
    kh = np.stack([t.data for t in maps.k_h])
    kv = np.stack([t.data for t in maps.k_v])
    ox = np.stack([t.data for t in maps.off_x])
    oy = np.stack([t.data for t in maps.off_y])
    mk = np.stack([t.data for t in maps.mask])
    out = np.zeros(frames[0].shape, dtype=fr.dtype)
    _edsc_forward(fr, kh, kv, ox, oy, mk, out)
    out += maps.bias.data

    def _backward(g):
        g = np.ascontiguousarray(g)
        gf, gkh, gkv = np.zeros_like(fr), np.zeros_like(kh), np.zeros_like(kv)
        gox, goy, gmk = np.zeros_like(ox), np.zeros_like(oy), np.zeros_like(mk)
        _edsc_backward(g, fr, kh, kv, ox, oy, mk, gf, gkh, gkv, gox, goy, gmk)
        grads = []
        for arr in (gf, gkh, gkv, gox, goy, gmk):
            grads.extend(arr[i] for i in range(nf))
        grads.append(g)
        return tuple(grads)

    return _result(out, inputs, "edsc_apply", _backward)


def blend_baseline(frames: Sequence) -> np.ndarray:
    """Average of the two frames nearest the midpoint, ``(I1 + I2) / 2``."""
    if len(frames) != 4:
        raise DimensionError(f"blend_baseline needs four frames, got {len(frames)}")
    f1, f2 = (f.data if isinstance(f, Tensor) else np.asarray(f) for f in frames[1:3])
    if f1.shape != f2.shape:
        raise DimensionError(f"frames differ in shape: {f1.shape} vs {f2.shape}")
    return (f1 + f2) / 2


class SynthesisHead(Module):
    """3x3 conv, leaky ReLU, x4 bilinear upsample, 3x3 conv (optionally sigmoid)."""

    def __init__(self, cin: int, cout: int, slope: float = 0.1, squash: bool = False, rng=None,
                 dtype=np.float32):
        self.conv1 = Conv2d(cin, cin, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.slope = slope
        self.squash = squash

    def forward(self, phi: Tensor) -> Tensor:
        t = nn.leaky_relu(self.conv1(phi), self.slope)
        _, h, w = t.shape
        y = self.conv2(nn.bilinear_resize(t, 4 * h, 4 * w))
        return nn.sigmoid(y) if self.squash else y

    def infer(self, phi: np.ndarray, band_bytes: int = nn.CHUNK_BYTES) -> np.ndarray:
        """Gradient-free forward computed in horizontal bands to bound peak memory.

        Upsampling acts per channel, so the channel mixing of each 3x3 tap of
        the second conv is applied at low resolution; only ``9 * cout`` tap
        projections are upsampled and then shift-added at full resolution.
        """
        w1, b1 = self.conv1.weight.data, self.conv1.bias.data
        w2, b2 = self.conv2.weight.data, self.conv2.bias.data
        t = nn.conv2d_array(nn.pad_zeros(phi, 1), w1, b1)
        t = np.where(t >= 0, t, self.slope * t)
        c, h, w = t.shape
        cout, _, k, _ = w2.shape
        taps = cout * k * k
        proj = w2.transpose(0, 2, 3, 1).reshape(taps, c) @ t.reshape(c, h * w)
        hh, ww = 4 * h, 4 * w
        ry = nn.interp_matrix(h, hh, t.dtype)
        rx = nn.interp_matrix(w, ww, t.dtype)
        flat = np.ascontiguousarray(proj.reshape(taps, h, w).transpose(1, 0, 2)).reshape(h, taps * w)
        out = np.empty((cout, hh, ww), dtype=t.dtype)
        for arr in (t, flat, out):
            memory.register(arr)
        p = k // 2
        band = max(1, band_bytes // max(1, taps * ww * t.itemsize) - 2 * p)
        for r0 in range(0, hh, band):
            r1 = min(hh, r0 + band)
            a, b = max(r0 - p, 0), min(r1 + p, hh)
            rows = np.asarray(ry[a:b] @ flat).reshape(b - a, taps, w).transpose(1, 0, 2)
            top = p - (r0 - a)
            up = np.zeros((taps, r1 - r0 + 2 * p, ww + 2 * p), dtype=t.dtype)
            memory.register(up)
            up[:, top:top + b - a, p:p + ww] = nn.resize_cols(rows, rx)
            up = up.reshape(cout, k, k, *up.shape[1:])
            acc = out[:, r0:r1]
            acc[...] = b2[:, None, None]
            for i in range(k):
                for j in range(k):
                    acc += up[:, i, j, i:i + r1 - r0, j:j + ww]
        if self.squash:
            np.tanh(0.5 * out, out=out)
            out += 1.0
            out *= 0.5
        return out


class SynthesisBlock(Module):
    """Independent heads for each (frame, map kind) pair plus one bias head."""

    def __init__(self, cin: int = 64, frames: int = 4, kernel_size: int = 5, channels: int = 3,
                 slope: float = 0.1, rng=None, dtype=np.float32):
        n = kernel_size
        mk = lambda cout, squash=False: SynthesisHead(cin, cout, slope, squash, rng=rng, dtype=dtype)  # noqa: E731
        self.k_h = [mk(n) for _ in range(frames)]
        self.k_v = [mk(n) for _ in range(frames)]
        self.off_x = [mk(n * n) for _ in range(frames)]
        self.off_y = [mk(n * n) for _ in range(frames)]
        self.mask = [mk(n * n, squash=True) for _ in range(frames)]
        self.bias = mk(channels)
        self.kernel_size = n
        self._init_as_average()

    def _init_as_average(self) -> None:
        """Start close to the plain average of the input frames.

        Offset and mask heads get zero final convs (offsets 0, mask 0.5), the
        kernel heads a centre tap of ``sqrt(0.5)`` each, and the kernel and bias
        heads a final conv scaled down by 100 so features only nudge the maps.
        """
        n = self.kernel_size
        for head in (*self.off_x, *self.off_y, *self.mask):
            head.conv2.weight.data[...] = 0
            head.conv2.bias.data[...] = 0
        for head in (*self.k_h, *self.k_v, self.bias):
            head.conv2.weight.data *= 0.01
        for head in (*self.k_h, *self.k_v):
            head.conv2.bias.data[...] = 0
            head.conv2.bias.data[n // 2] = math.sqrt(0.5)

    def generate_maps(self, phi64: Tensor) -> SynthesisMaps:
        run = lambda heads: [head(phi64) for head in heads]  # noqa: E731
        return SynthesisMaps(run(self.k_h), run(self.k_v), run(self.off_x), run(self.off_y),
                             run(self.mask), self.bias(phi64))

    def forward(self, phi64: Tensor, frames: Sequence[Tensor]) -> Tensor:
        return edsc_apply(frames, self.generate_maps(phi64))

    def infer(self, phi64: np.ndarray, frames: np.ndarray) -> np.ndarray:
        """Gradient-free synthesis; maps for one frame at a time are alive at any moment."""
        out = np.zeros(frames.shape[1:], dtype=frames.dtype)
        memory.register(out)
        for i in range(frames.shape[0]):
            maps = [heads[i].infer(phi64)[None] for heads in (self.k_h, self.k_v, self.off_x, self.off_y, self.mask)]
            edsc_accumulate(frames[i:i + 1], *maps, out)
            del maps
        out += self.bias.infer(phi64)
        return out


def generate_synthesis_maps(block: SynthesisBlock, phi64: Tensor) -> SynthesisMaps:
    return block.generate_maps(phi64)
