"""Registry of finite-difference gradient checks for every differentiable operation.

Each check builds a small double-precision instance, contracts the output
with a fixed random tensor to obtain a scalar, and returns the worst
relative error reported by :func:`grad_check` over all checked inputs.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import nn
from .decoder import fuse_level
from .encoders import PvtBlock, PvtStageConfig, SRAttention
from .gradcheck import grad_check
from .model import ModelConfig, build_model
from .synthesis import SynthesisMaps, edsc_apply
from .tensor import Tensor, getitem, mul, tensor_sum
from .training import l1_loss

F64 = np.float64


def _contract(out: Tensor, seed: int = 99) -> Tensor:
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return tensor_sum(mul(out, Tensor(r)))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _wrt_attr(owner, attr: str, run: Callable[[], Tensor]) -> Callable[[Tensor], Tensor]:
    """Scalar function of a replacement value for ``owner.<attr>``."""

    def f(t: Tensor) -> Tensor:
        saved = getattr(owner, attr)
        setattr(owner, attr, t)
        try:
            return run()
        finally:
            setattr(owner, attr, saved)

    return f


def _module_check(module, run: Callable[[], Tensor], names: list[str], coords: int = 24,
                  seed: int = 0) -> float:
    """Grad-check selected parameters of ``module`` on a random subset of coordinates."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        *path, attr = name.split(".")
        owner = module
        for part in path:
            owner = owner[int(part)] if part.isdigit() else getattr(owner, part)
        value = getattr(owner, attr).data
        idx = rng.choice(value.size, size=min(coords, value.size), replace=False)
        worst = max(worst, grad_check(_wrt_attr(owner, attr, run), value, coords=idx))
    return worst


def check_conv2d() -> float:
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    worst = 0.0
    for stride, pad, mode in ((1, 1, "zeros"), (2, 1, "reflect"), (1, 0, "zeros")):
        conv = lambda x_, w_, b_: _contract(nn.conv2d(x_, w_, b_, stride, pad, mode))  # noqa: E731
        worst = max(worst,
                    grad_check(lambda t: conv(t, Tensor(w), Tensor(b)), x),
                    grad_check(lambda t: conv(Tensor(x), t, Tensor(b)), w),
                    grad_check(lambda t: conv(Tensor(x), Tensor(w), t), b))
    return worst


def check_avg_pool2d() -> float:
    x = np.random.default_rng(2).standard_normal((2, 6, 5))
    return max(grad_check(lambda t: _contract(nn.avg_pool2d(t, 2)), x),
               grad_check(lambda t: _contract(nn.avg_pool2d(t, 3)), x))


def check_bilinear_resize() -> float:
    x = np.random.default_rng(3).standard_normal((2, 4, 5))
    return max(grad_check(lambda t: _contract(nn.bilinear_resize(t, 8, 10)), x),
               grad_check(lambda t: _contract(nn.bilinear_resize(t, 3, 7)), x),
               grad_check(lambda t: _contract(nn.bilinear_resize(t, 16, 20)), x))


def check_bilinear_sample() -> float:
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 5, 6))
    worst = 0.0
    for px, py in ((2.3, 1.7), (0.4, 3.6), (4.45, 0.15)):
        worst = max(worst,
                    grad_check(lambda t: _contract(nn.bilinear_sample(t, px, py)), x),
                    grad_check(lambda t: _contract(nn.bilinear_sample(Tensor(x), t, Tensor(np.array([py])))),
                               np.array([px])),
                    grad_check(lambda t: _contract(nn.bilinear_sample(Tensor(x), Tensor(np.array([px])), t)),
                               np.array([py])))
    return worst


def check_leaky_relu() -> float:
    x = _away_from_zero(np.random.default_rng(5), (3, 4, 4))
    return grad_check(lambda t: _contract(nn.leaky_relu(t, 0.1)), x)


def check_softmax() -> float:
    x = np.random.default_rng(6).standard_normal((4, 7)) * 2
    return grad_check(lambda t: _contract(nn.softmax(t)), x)


def check_linear() -> float:
    rng = np.random.default_rng(7)
    x, w, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)
    lin = lambda x_, w_, b_: _contract(nn.linear(x_, w_, b_))  # noqa: E731
    return max(grad_check(lambda t: lin(t, Tensor(w), Tensor(b)), x),
               grad_check(lambda t: lin(Tensor(x), t, Tensor(b)), w),
               grad_check(lambda t: lin(Tensor(x), Tensor(w), t), b))


def check_layer_norm() -> float:
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 6))
    g, o = rng.standard_normal(6), rng.standard_normal(6)
    ln = lambda x_, g_, o_: _contract(nn.layer_norm(x_, g_, o_))  # noqa: E731
    return max(grad_check(lambda t: ln(t, Tensor(g), Tensor(o)), x),
               grad_check(lambda t: ln(Tensor(x), t, Tensor(o)), g),
               grad_check(lambda t: ln(Tensor(x), Tensor(g), t), o))


def check_gelu() -> float:
    x = np.random.default_rng(9).standard_normal((3, 5)) * 2
    return grad_check(lambda t: _contract(nn.gelu(t)), x)


def check_depthwise_conv2d() -> float:
    rng = np.random.default_rng(10)
    x, w, b = rng.standard_normal((3, 5, 4)), rng.standard_normal((3, 3, 3)), rng.standard_normal(3)
    dw = lambda x_, w_, b_: _contract(nn.depthwise_conv2d(x_, w_, b_))  # noqa: E731
    return max(grad_check(lambda t: dw(t, Tensor(w), Tensor(b)), x),
               grad_check(lambda t: dw(Tensor(x), t, Tensor(b)), w),
               grad_check(lambda t: dw(Tensor(x), Tensor(w), t), b))


def _rescale(module, std: float, rng) -> None:
    """Replace parameters with larger random values so every path carries signal."""
    for _, p in module.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * std + (1.0 if p.ndim == 1 and "gain" in _ else 0.0)


def check_sra_attention() -> float:
    rng = np.random.default_rng(11)
    attn = SRAttention(8, 2, 2, rng=rng, dtype=F64)
    _rescale(attn, 0.3, rng)
    grid = (4, 4)
    x = rng.standard_normal((16, 8))
    worst = grad_check(lambda t: _contract(attn(t, grid)), x)
    fixed = Tensor(x)
    return max(worst, _module_check(attn, lambda: _contract(attn(fixed, grid)),
                                    ["q.weight", "kv.weight", "proj.bias", "sr.weight", "norm.gain"]))


def check_pvt_block() -> float:
    rng = np.random.default_rng(12)
    blk = PvtBlock(PvtStageConfig(embed_dim=8, depth=1, sr_ratio=2, num_heads=2, mlp_ratio=2), rng=rng, dtype=F64)
    _rescale(blk, 0.3, rng)
    grid = (4, 4)
    x = rng.standard_normal((16, 8))
    worst = grad_check(lambda t: _contract(blk(t, grid)), x)
    fixed = Tensor(x)
    return max(worst, _module_check(blk, lambda: _contract(blk(fixed, grid)),
                                    ["norm1.gain", "attn.kv.weight", "mlp.fc1.weight", "mlp.dwconv.weight",
                                     "mlp.fc2.bias"]))


def check_fuse_level() -> float:
    rng = np.random.default_rng(13)
    a, b, c = (rng.standard_normal((4, 3, 3)) for _ in range(3))
    return max(grad_check(lambda t: _contract(fuse_level(t, Tensor(b), Tensor(c))), a),
               grad_check(lambda t: _contract(fuse_level(Tensor(a), t, Tensor(c))), b),
               grad_check(lambda t: _contract(fuse_level(Tensor(a), Tensor(b), t)), c))


def random_edsc_inputs(rng, frames: int = 4, c: int = 3, h: int = 6, w: int = 6, n: int = 5,
                       max_offset: float = 1.5) -> dict[str, np.ndarray]:
    """Random EDSC operands; offsets in ``(-max_offset, max_offset)`` and masks in (0, 1)."""
    return {
        "frames": rng.random((frames, c, h, w)),
        "k_h": rng.standard_normal((frames, n, h, w)) * 0.5,
        "k_v": rng.standard_normal((frames, n, h, w)) * 0.5,
        "off_x": rng.uniform(-max_offset, max_offset, (frames, n * n, h, w)),
        "off_y": rng.uniform(-max_offset, max_offset, (frames, n * n, h, w)),
        "mask": rng.uniform(0.05, 0.95, (frames, n * n, h, w)),
        "bias": rng.standard_normal((c, h, w)) * 0.1,
    }


def maps_from_arrays(d: dict[str, np.ndarray]) -> SynthesisMaps:
    split = lambda a: [Tensor(a[i]) for i in range(a.shape[0])]  # noqa: E731
    return SynthesisMaps(split(d["k_h"]), split(d["k_v"]), split(d["off_x"]), split(d["off_y"]),
                         split(d["mask"]), Tensor(d["bias"]))


def _edsc_from(parts: dict[str, Tensor]) -> Tensor:
    split = lambda t: [getitem(t, i) for i in range(t.shape[0])]  # noqa: E731
    maps = SynthesisMaps(split(parts["k_h"]), split(parts["k_v"]), split(parts["off_x"]),
                         split(parts["off_y"]), split(parts["mask"]), parts["bias"])
    return edsc_apply(split(parts["frames"]), maps)


def check_edsc() -> float:
    d = random_edsc_inputs(np.random.default_rng(14), frames=2)
    pick = np.random.default_rng(15)
    worst = 0.0
    for key, value in d.items():
        f = lambda t, key=key: _contract(_edsc_from({k: t if k == key else Tensor(v) for k, v in d.items()}))  # noqa: E731
        idx = pick.choice(value.size, size=min(60, value.size), replace=False)
        worst = max(worst, grad_check(f, value, coords=idx))
    return worst


def check_l1_loss() -> float:
    rng = np.random.default_rng(16)
    gt = rng.standard_normal((3, 4, 4))
    out = gt + _away_from_zero(rng, gt.shape, 0.05)
    return grad_check(lambda t: l1_loss(t, gt), out)


TINY_CHECK_CONFIG = ModelConfig(pvt_depths=(1, 1), pvt_dims=(8, 16), sr_ratios=(2, 1), num_heads=(1, 2),
                                mlp_ratio=2, cnn_channels=(4, 8, 16))


def check_model() -> float:
    model = build_model(TINY_CHECK_CONFIG, seed=3, dtype=F64)
    # Bilinear sampling has slope jumps at integer positions.  Keep every tap's
    # offset near a fixed fractional value so no sample crosses one within +-h.
    r = np.random.default_rng(5)
    # The default init zeroes these final convs; small random weights keep every path live.
    for head in (*model.synthesis.off_x, *model.synthesis.off_y):
        b = head.conv2.bias.data
        head.conv2.weight.data[...] = r.normal(0.0, 2e-3, head.conv2.weight.shape)
        b[...] = r.uniform(0.2, 0.8, b.shape) * r.choice([-1.0, 1.0], b.shape)
    for head in model.synthesis.mask:
        head.conv2.weight.data[...] = r.normal(0.0, 0.05, head.conv2.weight.shape)
        head.conv2.bias.data[...] = r.normal(0.0, 0.5, head.conv2.bias.shape)
    rng = np.random.default_rng(17)
    x = rng.random((4, 3, 16, 16))
    run = lambda t: _contract(model.forward([getitem(t, i) for i in range(4)]))  # noqa: E731
    idx = rng.choice(x.size, size=48, replace=False)
    worst = grad_check(run, x, coords=idx)
    fixed = Tensor(x)
    params = ["pvt.stage1.patch_embed.proj.weight", "pvt.stage2.blocks.0.attn.q.weight",
              "cnn.block1.conv1.weight", "decoder.up2.conv.weight", "synthesis.k_h.1.conv2.weight",
              "synthesis.off_x.2.conv2.bias", "synthesis.mask.0.conv1.weight", "synthesis.bias.conv2.weight"]
    return max(worst, _module_check(model, lambda: run(fixed), params, coords=8))


GRAD_CHECKS: dict[str, Callable[[], float]] = {
    "conv2d": check_conv2d,
    "avg_pool2d": check_avg_pool2d,
    "bilinear_resize": check_bilinear_resize,
    "bilinear_sample": check_bilinear_sample,
    "leaky_relu": check_leaky_relu,
    "softmax": check_softmax,
    "linear": check_linear,
    "layer_norm": check_layer_norm,
    "gelu": check_gelu,
    "depthwise_conv2d": check_depthwise_conv2d,
    "sra_attention": check_sra_attention,
    "pvt_block": check_pvt_block,
    "fuse_level": check_fuse_level,
    "edsc": check_edsc,
    "l1_loss": check_l1_loss,
    "model": check_model,
}


def run_grad_checks(names=None) -> dict[str, float]:
    """Run the named checks (all by default) and return ``{name: worst error}``."""
    names = list(GRAD_CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in GRAD_CHECKS]
    if unknown:
        raise KeyError(f"unknown gradient check {unknown[0]!r}; choose from {', '.join(GRAD_CHECKS)}")
    return {n: GRAD_CHECKS[n]() for n in names}
