"""Dense tensors with taped reverse-mode differentiation.

Every op builds a node that remembers its parents and a closure mapping the
output gradient to parent gradients. ``backward`` walks the tape in reverse
topological order. There is no implicit broadcasting: binary ops demand equal
shapes and replication goes through :func:`expand`.
"""

from __future__ import annotations

import builtins
import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

_DTYPES = {32: np.float32, 64: np.float64}
_default_width = 32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def get_width() -> int:
    return _default_width


def set_width(width: int) -> None:
    global _default_width
    if width not in _DTYPES:
        raise ValueError(f"unsupported element width {width}; expected 32 or 64")
    _default_width = width


@contextlib.contextmanager
def precision(width: int) -> Iterator[None]:
    """Temporarily switch the element width used for new tensors."""
    prev = _default_width
    set_width(width)
    try:
        yield
    finally:
        set_width(prev)


def default_dtype() -> type:
    return _DTYPES[_default_width]


_tape = threading.local()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Skip recording the tape in the current thread."""
    prev = getattr(_tape, "off", False)
    _tape.off = True
    try:
        yield
    finally:
        _tape.off = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def width(self) -> int:
        return self.data.dtype.itemsize * 8

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, width={self.width}{tag})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return hadamard(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __getitem__(self, key) -> Tensor:
        return index(self, key)

    def backward(self) -> None:
        backward(self)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _node(data: np.ndarray, parents: Sequence[Tensor], fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = (not getattr(_tape, "off", False)
                         and any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    """Add a scalar constant to every element."""
    return _node(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": add, "hadamard": hadamard}


def elementwise(kind: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Dispatch one of add, hadamard, tanh, sigmoid, relu, scale."""
    if kind in _BINARY:
        if not isinstance(b, Tensor):
            raise TypeError(f"{kind} needs a second tensor operand")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "scale":
        if b is None:
            raise TypeError("scale needs a scalar factor")
        return scale(a, float(b.item() if isinstance(b, Tensor) else b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``. ``cond`` is constant."""
    _same_shape(a, b, "where")
    cond = np.asarray(cond, dtype=bool)
    if cond.shape != a.shape:
        raise ShapeError(f"where: condition shape {cond.shape} vs {a.shape}")
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (g * cond, g * ~cond))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ValueError("concat of zero tensors")
    axis = axis % parts[0].ndim
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("stack of zero tensors")
    n = len(parts)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _node(np.stack([p.data for p in parts], axis=axis), parts, back)


def _is_basic(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis
               for k in parts)


class _Scatter:
    """Gradient that touches only the ``key`` region of its parent."""

    __slots__ = ("key", "values", "basic")

    def __init__(self, key, values, basic):
        self.key, self.values, self.basic = key, values, basic

    def add_into(self, buf: np.ndarray) -> None:
        if self.basic:
            buf[self.key] += self.values
        else:
            np.add.at(buf, self.key, self.values)


def index(a: Tensor, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    basic = _is_basic(key)
    return _node(np.asarray(a.data[key]), (a,), lambda g: (_Scatter(key, g, basic),))


def expand(a: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and replicate ``n`` times along it."""
    if n < 1:
        raise ValueError(f"expand count must be >= 1, got {n}")
    axis = axis % (a.ndim + 1)
    y = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return _node(y, (a,), lambda g: (g.sum(axis=axis),))


# ---------------------------------------------------------------------------
# reductions


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    src = a.shape
    if axis is None:
        return _node(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,),
                     lambda g: (np.full(src, g, dtype=a.data.dtype),))
    axis = axis % a.ndim

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _node(a.data.sum(axis=axis), (a,), back)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def max(a: Tensor, axis: int) -> Tensor:  # noqa: A001
    """Max along ``axis``; gradient goes to the first maximal element."""
    axis = axis % a.ndim
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)
    src = a.shape

    def back(g):
        out = np.zeros(src, dtype=g.dtype)
        np.put_along_axis(out, arg, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _node(np.take_along_axis(a.data, arg, axis=axis).squeeze(axis), (a,), back)


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    """log(sum(exp(a))) along ``axis`` (all elements when None), max-shifted."""
    if a.data.size == 0:
        raise ValueError("logsumexp of an empty tensor")
    x = a.data
    if axis is None:
        m = x.max()
        y = np.asarray(m + np.log(np.exp(x - m).sum()), dtype=x.dtype)
        return _node(y, (a,), lambda g: (g * np.exp(x - y),))
    axis = axis % a.ndim
    if x.shape[axis] == 0:
        raise ValueError("logsumexp over an empty axis")
    m = x.max(axis=axis, keepdims=True)
    yk = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return _node(yk.squeeze(axis), (a,),
                 lambda g: (np.expand_dims(g, axis) * np.exp(x - yk),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _node(y, (a,), back)


# ---------------------------------------------------------------------------
# differentiation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None
             ) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaf gradients are reset first, so unreachable leaves in ``params`` end
    with an all-zero gradient. Returns the gradients of ``params`` by name.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params:
        for p in params.values():
            p.grad = np.zeros_like(p.data)
    if loss.requires_grad:
        order = _topo_order(loss)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owned: set[int] = set()
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is not None and parent.requires_grad:
                    _accumulate(grads, owned, parent, pg)
    if params is None:
        return {}
    return {k: p.grad for k, p in params.items()}


def _accumulate(grads: dict, owned: set, parent: Tensor, pg) -> None:
    k = id(parent)
    buf = grads.get(k)
    if isinstance(pg, _Scatter):
        if buf is None:
            buf = np.zeros(parent.shape, dtype=parent.data.dtype)
        elif k not in owned:
            buf = buf.copy()
        grads[k] = buf
        owned.add(k)
        pg.add_into(buf)
    elif buf is None:
        grads[k] = pg
    elif k in owned:
        buf += pg
    else:
        grads[k] = buf + pg
        owned.add(k)


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


@dataclass
class GradientReport:
    max_rel_error: dict[str, float]
    passed: bool
    h: float
    tol: float
    worst: dict[str, tuple[int, float, float]] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return builtins.max(self.max_rel_error.values(), default=0.0)


def grad_check(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               h: float = 1e-5, tol: float = 1e-4) -> GradientReport:
    """Compare analytic gradients of ``fn()`` with central differences.

    ``fn`` must rebuild its graph from the current contents of ``params``.
    Parameters must be 64-bit. Relative error per element is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check needs 64-bit parameters; {name} is {p.data.dtype}")
    analytic = {k: g.copy() for k, g in backward(fn(), params).items()}
    errors: dict[str, float] = {}
    worst: dict[str, tuple[int, float, float]] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise FloatingPointError(f"non-finite value perturbing {name}[{i}]")
            num = (fp - fm) / (2.0 * h)
            rel = abs(a_flat[i] - num) / builtins.max(1e-8, abs(a_flat[i]) + abs(num))
            if rel >= err:
                err = rel
                worst[name] = (i, float(a_flat[i]), num)
        errors[name] = err
    return GradientReport(errors, all(e < tol for e in errors.values()), h, tol, worst)
