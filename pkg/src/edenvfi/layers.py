"""Parameter-holding layers built on the functional primitives in :mod:`edenvfi.nn`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import nn
from .tensor import Tensor


class Module:
    """Minimal container: parameters are ``Tensor`` attributes with ``requires_grad``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _apply(self, fn) -> None:
        for name, val in list(vars(self).items()):
            if isinstance(val, Tensor) and val.requires_grad:
                setattr(self, name, fn(val))
            elif isinstance(val, Module):
                val._apply(fn)
            elif isinstance(val, list):
                for item in val:
                    if isinstance(item, Module):
                        item._apply(fn)

    def astype(self, dtype):
        """Convert every parameter to ``dtype`` in place; returns ``self``."""
        self._apply(lambda p: Tensor(p.data.astype(dtype), requires_grad=True))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True)


class Conv2d(Module):
    """Convolution with He-normal weights (std sqrt(2 / fan_in)) and zero bias."""

    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = cin * kernel * kernel
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, kernel, kernel)), dtype)
        self.bias = _param(np.zeros(cout), dtype)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return nn.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, kernel: int = 3, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / (kernel * kernel)), (channels, kernel, kernel)), dtype)
        self.bias = _param(np.zeros(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return nn.depthwise_conv2d(x, self.weight, self.bias)


class Linear(Module):
    """Token-wise affine layer; weights are N(0, std^2) with std 0.02 by default."""

    def __init__(self, din: int, dout: int, std: float = 0.02, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param(rng.normal(0.0, std, (din, dout)), dtype)
        self.bias = _param(np.zeros(dout), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return nn.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gain = _param(np.ones(dim), dtype)
        self.offset = _param(np.zeros(dim), dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return nn.layer_norm(x, self.gain, self.offset, self.eps)
