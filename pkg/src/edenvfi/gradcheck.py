"""Central-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor, backward, no_grad


def _scalar(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return out.item()


def grad_check(
    f: Callable[[Tensor], Tensor],
    x0,
    h: float = 1e-5,
    coords: Iterable[int] | None = None,
) -> float:
    """Compare the taped gradient of ``f`` at ``x0`` with central differences.

    Returns ``max_i |a_i - n_i| / max(1, |a_i|, |n_i|)`` where ``a`` is the
    analytic gradient and ``n_i = (f(x + h e_i) - f(x - h e_i)) / 2h``.
    ``coords`` restricts the comparison to a subset of flat indices.
    """
    if h <= 0:
        raise ContractError(f"step size must be positive, got {h}")
    x0 = np.array(x0, dtype=np.float64)
    if x0.ndim == 0:
        x0 = x0.reshape(1)

    var = Tensor(x0.copy(), requires_grad=True)
    out = f(var)
    value = _scalar(out)
    if not np.isfinite(value):
        raise NumericError("function value is not finite at x0")
    if out.requires_grad:
        backward(out)
    analytic = var.grad.reshape(-1)

    flat = x0.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(Tensor(x0.copy())))
            flat[i] = orig - h
            fm = _scalar(f(Tensor(x0.copy())))
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i]
            if not (np.isfinite(numeric) and np.isfinite(a)):
                raise NumericError(f"NaN encountered at coordinate {i}")
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
