# neural_statistician/core/tensor.py
"""
Dense tensors with reverse-mode automatic differentiation.

Every operation returns a new Tensor that remembers its parents and a
gradient function mapping the upstream gradient to one gradient per parent.
The graph is a dynamic tape: it is rebuilt on every forward pass and walked
once per `backward` call.

Only leaf tensors (parameters, inputs) keep `.grad`; gradients of
intermediate nodes live in a local accumulator during the backward walk.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from neural_statistician.core.errors import StatisticianError

DTYPE = np.float64

GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
TensorLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class ShapeError(StatisticianError, ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes: Tuple[int, ...], detail: str = "") -> None:
        self.op = op
        self.shapes = shapes
        text = " and ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {text}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DomainError(StatisticianError, ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class GradientError(StatisticianError, ValueError):
    """Raised for invalid backward calls."""


_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate ops without recording the graph (per thread / context)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """n-dimensional float64 array participating in reverse-mode differentiation."""

    def __init__(self, data: TensorLike, requires_grad: bool = False) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._grad_fn: Optional[GradFn] = None

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="expected a single element")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # Operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other: TensorLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: TensorLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: TensorLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: TensorLike) -> "Tensor":
        return matmul(self, other)

    # method forms of the catalogue
    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def square(self) -> "Tensor":
        return square(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def elu(self) -> "Tensor":
        return elu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    out.data.setflags(write=False)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(op, a.shape, b.shape) from exc


def _check_axis(op: str, t: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(op, t.shape, detail=f"axis {axis} out of range")
    return axis % t.ndim


# ----------------------------------------------------------------------
# Elementwise binary ops
# ----------------------------------------------------------------------


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn, "mul")


def scale(a: TensorLike, k: float) -> Tensor:
    a = as_tensor(a)
    k = float(k)
    return _result(a.data * k, (a,), lambda g: (g * k,), "scale")


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), grad_fn, "matmul")


# ----------------------------------------------------------------------
# Elementwise unary ops
# ----------------------------------------------------------------------


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive value {float(a.data.min())!r} in input")
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,), "log")


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * x * g,), "square")


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    # subgradient 0 at exactly 0
    mask = (a.data > 0).astype(DTYPE)
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def elu(a: TensorLike, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    y = np.where(x > 0, x, neg_part)
    dy = np.where(x > 0, 1.0, neg_part + alpha)
    return _result(y, (a,), lambda g: (g * dy,), "elu")


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    x = a.data
    z = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def clip(a: TensorLike, lo: float, hi: float, straight_through: bool = False) -> Tensor:
    """
    Clamp to [lo, hi]. By default the gradient flows only where the input lies
    strictly inside; with straight_through it passes unchanged everywhere.
    """
    a = as_tensor(a)
    x = a.data
    if straight_through:
        return _result(np.clip(x, lo, hi), (a,), lambda g: (g,), "clip")
    inside = ((x > lo) & (x < hi)).astype(DTYPE)
    return _result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ----------------------------------------------------------------------
# Reductions
# ----------------------------------------------------------------------


def sum_(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _check_axis("sum", a, axis)
    shape = a.shape

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape),)

    return _result(a.data.sum(axis=ax, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """sum(axis) scaled by 1/extent."""
    a = as_tensor(a)
    ax = _check_axis("mean", a, axis)
    extent = a.size if ax is None else a.shape[ax]
    return scale(sum_(a, axis=ax, keepdims=keepdims), 1.0 / extent)


def max_(a: TensorLike, axis: int) -> Tensor:
    """Maximum along `axis`; the gradient goes to the first arg-max."""
    a = as_tensor(a)
    ax = _check_axis("max", a, axis)
    idx = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    shape = a.shape

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        out = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(out, idx, np.expand_dims(g, ax), axis=ax)
        return (out,)

    return _result(np.take_along_axis(a.data, idx, axis=ax).squeeze(ax), (a,), grad_fn, "max")


# ----------------------------------------------------------------------
# Structural ops
# ----------------------------------------------------------------------


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat", detail="no operands")
    ax = _check_axis("concat", parts[0], axis)
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError("concat", ref, p.shape, detail=f"axis {axis}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([p.data for p in parts], axis=ax), parts, grad_fn, "concat")


def slice_(a: TensorLike, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    ax = _check_axis("slice", a, axis)
    if not 0 <= start < stop <= a.shape[ax]:
        raise ShapeError("slice", a.shape, detail=f"range [{start}, {stop}) on axis {axis}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index_t = tuple(index)
    shape = a.shape

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        out = np.zeros(shape, dtype=DTYPE)
        out[index_t] = g
        return (out,)

    return _result(a.data[index_t], (a,), grad_fn, "slice")


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError("reshape", old, tuple(shape)) from exc
    return _result(data, (a,), lambda g: (g.reshape(old),), "reshape")


def broadcast_to(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    target = tuple(shape)
    try:
        data = np.broadcast_to(a.data, target)
    except ValueError as exc:
        raise ShapeError("broadcast_to", a.shape, target) from exc
    old = a.shape
    return _result(data, (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


# ----------------------------------------------------------------------
# Backward pass
# ----------------------------------------------------------------------


def _topological_order(root: Tensor) -> List[Tensor]:
    """Parents before children, iterative so deep graphs do not hit the recursion limit."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable requires_grad leaf."""
    if loss.size != 1:
        raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("backward: loss does not depend on any requires_grad tensor")

    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = np.array(g, dtype=DTYPE) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg
