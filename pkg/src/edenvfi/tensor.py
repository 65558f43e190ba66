"""Dense tensors and a reverse-mode differentiation tape.

Every differentiable operation in the package is a function that takes
:class:`Tensor` inputs, computes its result with numpy, and (when any input
requires a gradient and recording is enabled) appends one node to the
current :class:`Tape`.  ``backward`` walks the tape in strict reverse
insertion order, then clears it.

Broadcasting rule: elementwise operations require identical shapes, or a
python scalar on one side.  The only other broadcast in the package is the
bias add built into ``conv2d``, ``linear`` and ``layer_norm`` (a per-channel
vector onto the leading axis of a feature map, or onto the trailing axis of
a token matrix).
"""

from __future__ import annotations

import contextlib
import threading
import weakref
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, TapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class MemoryTracker:
    """High-water mark of bytes held by live tensor buffers.

    Buffers are counted once per underlying allocation, so views created by
    ``reshape`` or slicing do not inflate the count.
    """

    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self._buffers: dict[int, list[int]] = {}
        self._lock = threading.Lock()

    def register(self, obj) -> None:
        """Count the buffer behind a :class:`Tensor` or ndarray until ``obj`` is collected."""
        root = obj.data if isinstance(obj, Tensor) else obj
        while isinstance(root.base, np.ndarray):
            root = root.base
        key = id(root)
        with self._lock:
            entry = self._buffers.get(key)
            if entry is None:
                self._buffers[key] = [1, root.nbytes]
                self.live_bytes += root.nbytes
                if self.live_bytes > self.peak_bytes:
                    self.peak_bytes = self.live_bytes
            else:
                entry[0] += 1
        weakref.finalize(obj, self._release, key)

    def _release(self, key: int) -> None:
        with self._lock:
            entry = self._buffers.get(key)
            if entry is None:
                return
            entry[0] -= 1
            if entry[0] == 0:
                self.live_bytes -= entry[1]
                del self._buffers[key]

    def reset_peak(self) -> None:
        with self._lock:
            self.peak_bytes = self.live_bytes


memory = MemoryTracker()


class Tensor:
    """N-dimensional real array, optionally enrolled in a differentiation tape.

    A tensor created with ``requires_grad=True`` is a leaf variable; its
    ``grad`` starts at zeros and receives ``+=`` contributions from every
    ``backward`` call.  Tensors produced by recorded operations carry a tape
    node and only hold a gradient when they are the root of ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise DimensionError(f"tensor shape entries must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node = None
        memory.register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ContractError("division is only defined by a python scalar")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)

    def backward(self) -> None:
        backward(self)


@dataclass
class _Node:
    kind: str
    inputs: tuple
    backward: Callable
    index: int


class Tape:
    """Ordered record of the operations executed since the last clear."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.generation = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: tuple, output: Tensor, backward_fn: Callable) -> None:
        node = _Node(kind, inputs, backward_fn, len(self.nodes))
        self.nodes.append(node)
        output._node = (self, self.generation, node.index)

    def clear(self) -> None:
        """Drop every node and its saved forward context."""
        self.nodes = []
        self.generation += 1

    def kinds(self) -> list[str]:
        return [n.kind for n in self.nodes]


class _State(threading.local):
    def __init__(self):
        self.enabled = True
        self.tape = Tape()


_state = _State()


def current_tape() -> Tape:
    return _state.tape


def grad_enabled() -> bool:
    return _state.enabled


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def use_tape(tape: Tape):
    """Record into ``tape`` for the duration of the block."""
    prev = _state.tape
    _state.tape = tape
    try:
        yield tape
    finally:
        _state.tape = prev


def _live_node(t: Tensor):
    node = t._node
    if node is None:
        return None
    tape, gen, _ = node
    return node if gen == tape.generation else None


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable leaf.

    The tape is cleared afterwards, so calling ``backward`` a second time on
    the same graph raises :class:`TapeError`; re-run the forward pass first.
    A root that was not produced by a recorded operation changes nothing
    unless it is itself a leaf variable.
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if root._node is None:
        if root.requires_grad:
            root.grad = root.grad + 1.0
        return
    tape, gen, idx = root._node
    if gen != tape.generation:
        raise TapeError("tape already consumed by a previous backward; re-run the forward pass")
    root.grad = np.ones_like(root.data)
    pending = {idx: root.grad}
    nodes = tape.nodes
    for i in range(idx, -1, -1):
        g = pending.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        grads = node.backward(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            live = _live_node(inp)
            if live is not None and live[0] is tape:
                k = live[2]
                pending[k] = pending[k] + gi if k in pending else gi
            else:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi
    tape.clear()


def _result(data: np.ndarray, inputs: Sequence[Tensor], kind: str, backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _state.tape.record(kind, tuple(inputs), out, backward_fn)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x if dtype is None or x.dtype == dtype else x.astype(dtype)
    return Tensor(x, dtype=dtype)


def check_dtypes(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")
    check_dtypes(a, b)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data + b, (a,), "add_scalar", lambda g: (g,))
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data * b, (a,), "mul_scalar", lambda g: (g * b,))
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[M x K]`` and ``[K x N]``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    check_dtypes(a, b)
    ad, bd = a.data, b.data

    def _backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), "matmul", _backward)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    out = np.array([a.data.sum()], dtype=a.dtype)
    return _result(out, (a,), "sum", lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    out = np.array([a.data.mean()], dtype=a.dtype)
    return _result(out, (a,), "mean", lambda g: (np.full(shape, g.reshape(()) / n, dtype=g.dtype),))


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at exactly 0 is 0."""
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(out, (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; the result must keep at least one element."""
    shape, dtype = a.shape, a.dtype
    out = a.data[index]

    def _backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g.reshape(full[index].shape)
        return (full,)

    return _result(np.ascontiguousarray(out), (a,), "getitem", _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    check_dtypes(*tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    check_dtypes(*tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors])
    return _result(out, tensors, "stack", lambda g: tuple(g[i] for i in range(len(tensors))))


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.arange(n), (before, after), mode="reflect" if n > 1 else "edge")


def pad_reflect(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Mirror-pad the two trailing axes of a ``[C x H x W]`` map (edge excluded)."""
    if x.ndim != 3:
        raise DimensionError(f"pad_reflect expects [C x H x W], got {x.shape}")
    _, h, w = x.shape
    iy = _reflect_index(h, top, bottom)
    ix = _reflect_index(w, left, right)
    out = x.data[:, iy[:, None], ix[None, :]]

    def _backward(g):
        gy = np.zeros((g.shape[0], h, g.shape[2]), dtype=g.dtype)
        np.add.at(gy, (slice(None), iy), g)
        gx = np.zeros((g.shape[0], h, w), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), ix), gy)
        return (gx,)

    return _result(out, (x,), "pad_reflect", _backward)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))
