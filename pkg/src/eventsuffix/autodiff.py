"""Minimal dense tensors with tape-based reverse-mode differentiation.

Everything is float64.  Operations executed while a :class:`Tape` is active
are recorded when at least one input is tracked (a parameter leaf or the
output of a recorded operation); :func:`backward` replays the tape in reverse.

    >>> w = Tensor([1.0, 2.0], requires_grad=True, name="w")
    >>> x = Tensor([3.0, 4.0])
    >>> with Tape() as tape:
    ...     loss = (w * x).sum()
    >>> backward(loss, tape, {"w": w})["w"]
    array([3., 4.])
"""

from __future__ import annotations

import threading
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "backward",
    "finite_difference_check",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "neg",
    "concat",
    "take",
    "sum",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "softmax",
    "clip_min",
    "squared_error",
    "stop_gradient",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A float64 array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor({self.data!r}{label})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self):
        return sum(self)


class _Node:
    __slots__ = ("output", "inputs", "grad_fn")

    def __init__(self, output, inputs, grad_fn):
        self.output = output
        self.inputs = inputs
        self.grad_fn = grad_fn


_local = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of primitive applications.

    Use as a context manager; tapes nest, the innermost one records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> Tape:
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.name = None
    out._tracked = False
    tape = _active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.nodes.append(_Node(out, tuple(inputs), grad_fn))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- primitives --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``b`` may be a matrix or a vector."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.data, b.data

    def grad_fn(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _emit(av @ bv, (a, b), grad_fn, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.data, b.data
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a: Tensor, c: float) -> Tensor:
    return _emit(a.data + float(c), (a,), lambda g: (g,), "shift")


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Join 1-D tensors (scalars count as length 1) end to end."""
    parts = [t.data.reshape(-1) for t in tensors]
    if any(t.data.ndim > 1 for t in tensors):
        raise ShapeError(f"concat: expects vectors, got {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [p.size for p in parts])
    shapes = [t.shape for t in tensors]

    def grad_fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]].reshape(shapes[i]) for i in range(len(shapes)))

    return _emit(np.concatenate(parts), tuple(tensors), grad_fn, "concat")


def take(a: Tensor, index) -> Tensor:
    """Basic slicing/indexing (``a[index]``)."""
    data = np.array(a.data[index], dtype=np.float64)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit(data, (a,), grad_fn, "slice")


def sum(a: Tensor) -> Tensor:  # noqa: A001
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, g),), "sum")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _emit(np.log(x), (a,), lambda g: (g / x,), "log")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (a,), grad_fn, "softmax")


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; no gradient where the floor is active."""
    mask = a.data > floor
    return _emit(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clip_min")


def squared_error(a: Tensor, b: Tensor) -> Tensor:
    """``sum((a - b)**2)`` as a scalar."""
    _same_shape("squared_error", a, b)
    d = a.data - b.data
    return _emit(np.array(np.sum(d * d)), (a, b), lambda g: (2.0 * g * d, -2.0 * g * d), "squared_error")


def stop_gradient(a: Tensor) -> Tensor:
    """Untracked copy of ``a``: gradients do not cross this point."""
    return Tensor(a.data)


# -- reverse pass ------------------------------------------------------------


def backward(loss: Tensor, tape: Tape, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of the scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors that do not influence ``loss`` get a zero gradient.
    """
    if loss.data.shape not in ((), (1,)):
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.grad_fn(g)):
            if not inp._tracked:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = {}
    for name, t in wrt.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return out


def finite_difference_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` maps a dict of tracked tensors to a scalar tensor.  For each
    parameter array the error is ``|a - n| / max(|a| + |n|, 1e-6)`` in the
    L2 norm, so coordinates whose true gradient is tiny do not turn
    round-off into a large ratio.
    """
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    with Tape() as tape:
        loss = f(leaves)
    analytic = backward(loss, tape, leaves)

    worst = 0.0
    for name, value in params.items():
        base = np.array(value, dtype=np.float64)
        flat = base.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            probe = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            plus = flat.copy()
            plus[i] += step
            probe[name] = plus.reshape(base.shape)
            f_plus = f({k: Tensor(v) for k, v in probe.items()}).item()
            minus = flat.copy()
            minus[i] -= step
            probe[name] = minus.reshape(base.shape)
            f_minus = f({k: Tensor(v) for k, v in probe.items()}).item()
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        scale = max(float(np.linalg.norm(a) + np.linalg.norm(numeric)), 1e-6)
        worst = max(worst, float(np.linalg.norm(a - numeric)) / scale)
    return worst
