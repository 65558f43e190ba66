"""Differentiable neural-network primitives on ``[C x H x W]`` maps and ``[N x D]`` tokens.

Conventions:

* convolution is cross-correlation (no kernel flip);
* bilinear resizing uses pixel-center alignment,
  ``src = (dst + 0.5) * in / out - 0.5``, clamped to the valid range;
* point sampling clamps coordinates to ``[0, W-1] x [0, H-1]`` before
  interpolating, so the gradient w.r.t. a clamped coordinate is zero;
* average pooling uses non-overlapping windows (window == stride).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ContractError, DimensionError
from .tensor import Tensor, _reflect_index, _result, check_dtypes, grad_enabled

CHUNK_BYTES = 64 * 2**20


def pad_zeros(x: np.ndarray, p: int) -> np.ndarray:
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, p:p + h, p:p + w] = x
    return out


def _pad(x: np.ndarray, top: int, bottom: int, left: int, right: int, mode: str) -> np.ndarray:
    if not (top or bottom or left or right):
        return x
    if mode == "zeros":
        c, h, w = x.shape
        out = np.zeros((c, h + top + bottom, w + left + right), dtype=x.dtype)
        out[:, top:top + h, left:left + w] = x
        return out
    if mode == "reflect":
        iy = _reflect_index(x.shape[1], top, bottom)
        ix = _reflect_index(x.shape[2], left, right)
        return x[:, iy[:, None], ix[None, :]]
    raise ContractError(f"unknown padding mode {mode!r}")


def _unpad_grad(g: np.ndarray, h: int, w: int, top: int, bottom: int, left: int,
                right: int, mode: str) -> np.ndarray:
    if not (top or bottom or left or right):
        return g
    if mode == "zeros":
        return g[:, top:top + h, left:left + w]
    iy = _reflect_index(h, top, bottom)
    ix = _reflect_index(w, left, right)
    gy = np.zeros((g.shape[0], h, g.shape[2]), dtype=g.dtype)
    np.add.at(gy, (slice(None), iy), g)
    gx = np.zeros((g.shape[0], h, w), dtype=g.dtype)
    np.add.at(gx, (slice(None), slice(None), ix), gy)
    return gx


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)


def conv2d_array(xp: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, stride: int = 1) -> np.ndarray:
    """Forward convolution of an already padded array, chunked over output rows."""
    cout, cin, kh, kw = weight.shape
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    wm = weight.reshape(cout, -1)
    out = np.empty((cout, ho, wo), dtype=xp.dtype)
    rows = max(1, CHUNK_BYTES // max(1, cin * kh * kw * wo * xp.itemsize))
    for r0 in range(0, ho, rows):
        r1 = min(ho, r0 + rows)
        part = xp[:, r0 * stride : (r1 - 1) * stride + kh]
        cols = _im2col(part, kh, kw, stride, r1 - r0, wo)
        out[:, r0:r1] = (wm @ cols).reshape(cout, r1 - r0, wo)
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, padding_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation of ``x [C_in x H x W]`` with ``weight [C_out x C_in x kh x kw]``.

    Output spatial size is ``floor((H + 2*padding - kh) / stride) + 1``.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects [C x H x W] and 4-D weight, got {x.shape} and {weight.shape}")
    cout, cin, kh, kw = weight.shape
    c, h, w = x.shape
    if c != cin:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {cin}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})")
    if stride < 1:
        raise ContractError(f"stride must be positive, got {stride}")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    check_dtypes(*inputs)
    p = padding
    xp = _pad(x.data, p, p, p, p, padding_mode)
    wd = weight.data
    bd = None if bias is None else bias.data

    recording = grad_enabled() and any(t.requires_grad for t in inputs)
    if not recording:
        return _result(conv2d_array(xp, wd, bd, stride), inputs, "conv2d", None)

    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wm = wd.reshape(cout, -1)
    out = (wm @ cols).reshape(cout, ho, wo)
    if bd is not None:
        out += bd[:, None, None]
    xp_shape = xp.shape

    def _backward(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(wd.shape)
        gb = g2.sum(axis=1) if bd is not None else None
        gx = None
        if x.requires_grad:
            gcols = (wm.T @ g2).reshape(cin, kh, kw, ho, wo)
            gxp = np.zeros(xp_shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride] += gcols[:, i, j]
            gx = _unpad_grad(gxp, h, w, p, p, p, p, padding_mode)
        return (gx, gw) if bd is None else (gx, gw, gb)

    return _result(out, inputs, "conv2d", _backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-channel ``k x k`` convolution (zero padding k//2) of ``x [C x H x W]`` with ``weight [C x k x k]``."""
    c, h, w = x.shape
    if weight.ndim != 3 or weight.shape[0] != c or weight.shape[1] != weight.shape[2]:
        raise DimensionError(f"depthwise_conv2d: weight {weight.shape} does not fit input {x.shape}")
    check_dtypes(x, weight, bias)
    k = weight.shape[1]
    p = k // 2
    xp = pad_zeros(x.data, p)
    wd = weight.data
    out = np.repeat(bias.data[:, None, None], h, axis=1).repeat(w, axis=2)
    for i in range(k):
        for j in range(k):
            out += wd[:, i, j, None, None] * xp[:, i : i + h, j : j + w]

    def _backward(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gw[:, i, j] = np.einsum("chw,chw->c", g, xp[:, i : i + h, j : j + w])
                gxp[:, i : i + h, j : j + w] += wd[:, i, j, None, None] * g
        return gxp[:, p : p + h, p : p + w], gw, g.sum(axis=(1, 2))

    return _result(out, (x, weight, bias), "depthwise_conv2d", _backward)


def avg_pool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Mean over non-overlapping ``window x window`` blocks; trailing remainder rows/cols are dropped."""
    stride = window if stride is None else stride
    if stride != window:
        raise ContractError(f"avg_pool2d supports window == stride only, got {window} and {stride}")
    if x.ndim != 3:
        raise DimensionError(f"avg_pool2d expects [C x H x W], got {x.shape}")
    c, h, w = x.shape
    if h < window or w < window:
        raise DimensionError(f"avg_pool2d: input {h}x{w} smaller than window {window}")
    k = window
    ho, wo = h // k, w // k
    out = x.data[:, : ho * k, : wo * k].reshape(c, ho, k, wo, k).mean(axis=(2, 4))

    def _backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        block = np.broadcast_to(g[:, :, None, :, None] / (k * k), (c, ho, k, wo, k))
        full[:, : ho * k, : wo * k] = block.reshape(c, ho * k, wo * k)
        return (full,)

    return _result(out, (x,), "avg_pool2d", _backward)


@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> sp.csr_matrix:
    """Sparse ``[n_out x n_in]`` linear-interpolation matrix (pixel-center convention)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    m = sp.coo_matrix(
        (np.concatenate([1.0 - frac, frac]), (np.concatenate([rows, rows]), np.concatenate([i0, i1]))),
        shape=(n_out, n_in),
    )
    return m.tocsr().astype(dtype)


def resize_rows(x: np.ndarray, r: sp.csr_matrix) -> np.ndarray:
    """Apply an interpolation matrix along axis 1 of ``[C x H x W]``."""
    c, h, w = x.shape
    flat = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(h, c * w)
    return np.asarray(r @ flat).reshape(r.shape[0], c, w).transpose(1, 0, 2)


def resize_cols(x: np.ndarray, r: sp.csr_matrix) -> np.ndarray:
    """Apply an interpolation matrix along axis 2 of ``[C x H x W]``."""
    c, h, w = x.shape
    flat = x.reshape(c * h, w)
    return np.asarray(r @ flat.T).T.reshape(c, h, r.shape[0])


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize ``[C x H x W]`` to ``[C x out_h x out_w]`` by bilinear interpolation."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"bilinear_resize: output size must be >= 1, got {out_h}x{out_w}")
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resize expects [C x H x W], got {x.shape}")
    _, h, w = x.shape
    ry = interp_matrix(h, out_h, x.dtype)
    rx = interp_matrix(w, out_w, x.dtype)
    out = np.ascontiguousarray(resize_cols(resize_rows(x.data, ry), rx))

    def _backward(g):
        return (np.ascontiguousarray(resize_rows(resize_cols(g, rx.T.tocsr()), ry.T.tocsr())),)

    return _result(out, (x,), "bilinear_resize", _backward)


def _axis_coord(p: float, n: int):
    inside = 0.0 <= p <= n - 1
    pc = min(max(p, 0.0), n - 1.0)
    i0 = int(np.floor(pc))
    if n > 1:
        i0 = min(i0, n - 2)
    i1 = min(i0 + 1, n - 1)
    return i0, i1, pc - i0, inside


def bilinear_sample(x: Tensor, px, py) -> Tensor:
    """Sample ``x [C x H x W]`` at fractional pixel position ``(px, py)``; returns ``[C]``.

    ``px`` and ``py`` are python floats or one-element tensors; coordinates
    are clamped to the image before interpolation.
    """
    if x.ndim != 3:
        raise DimensionError(f"bilinear_sample expects [C x H x W], got {x.shape}")
    _, h, w = x.shape
    tx = px if isinstance(px, Tensor) else None
    ty = py if isinstance(py, Tensor) else None
    fxv = tx.item() if tx is not None else float(px)
    fyv = ty.item() if ty is not None else float(py)
    x0, x1, fx, in_x = _axis_coord(fxv, w)
    y0, y1, fy, in_y = _axis_coord(fyv, h)
    d = x.data
    v00, v01 = d[:, y0, x0], d[:, y0, x1]
    v10, v11 = d[:, y1, x0], d[:, y1, x1]
    top = (1 - fx) * v00 + fx * v01
    bot = (1 - fx) * v10 + fx * v11
    out = (1 - fy) * top + fy * bot

    def _backward(g):
        gx = np.zeros_like(d)
        for (yy, xx), wgt in (((y0, x0), (1 - fy) * (1 - fx)), ((y0, x1), (1 - fy) * fx),
                              ((y1, x0), fy * (1 - fx)), ((y1, x1), fy * fx)):
            gx[:, yy, xx] += g * wgt
        grads = [gx]
        if tx is not None:
            dfx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
            grads.append(np.array([np.dot(g, dfx) if in_x else 0.0], dtype=d.dtype))
        if ty is not None:
            grads.append(np.array([np.dot(g, bot - top) if in_y else 0.0], dtype=d.dtype))
        return tuple(grads)

    inputs = [x] + [t for t in (tx, ty) if t is not None]
    return _result(out.astype(d.dtype), inputs, "bilinear_sample", _backward)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    d = x.data
    pos = d >= 0
    out = np.where(pos, d, slope * d)
    return _result(out, (x,), "leaky_relu", lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / np.sqrt(2.0)))
    out = (d * cdf).astype(d.dtype)

    def _backward(g):
        pdf = np.exp(-0.5 * d * d) / np.sqrt(2.0 * np.pi)
        return ((g * (cdf + d * pdf)).astype(d.dtype),)

    return _result(out, (x,), "gelu", _backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis (max-subtracted)."""
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), "softmax", _backward)


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of ``x [N x D]`` over ``D``, then apply ``gain`` and ``offset``."""
    if x.ndim != 2 or gain.shape != (x.shape[1],) or offset.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, offset {offset.shape}")
    check_dtypes(x, gain, offset)
    d = x.data
    mu = d.mean(axis=1, keepdims=True)
    xc = d - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + offset.data

    def _backward(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result(out, (x, gain, offset), "layer_norm", _backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight + bias`` with ``weight [D_in x D_out]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    check_dtypes(*inputs)
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data

    def _backward(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    return _result(out, inputs, "linear", _backward)
