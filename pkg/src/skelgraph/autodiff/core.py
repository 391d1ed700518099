"""Reverse-mode differentiable arrays on top of numpy.

Every primitive returns a new :class:`DiffArray` that remembers its parents
and a closure mapping the upstream gradient to one gradient per parent.
When a :class:`Tape` is active, primitives are also appended to it in
execution order, which is already a valid topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NumericError, UsageError

_DEFAULT_DTYPE = np.float64
_grad_enabled = True
_active_tapes: list["Tape"] = []


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise UsageError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class DiffArray:
    """Dense float array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, DiffArray):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else _DEFAULT_DTYPE
        self.data: np.ndarray = np.array(arr, dtype=dtype, copy=True)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[DiffArray, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffArray":
        return DiffArray(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffArray(shape={self.shape}, op={self._op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def abs(self):
        return abs_(self)


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; every primitive run inside the block is
    appended. ``backward(loss, tape)`` then replays the record in reverse.
    """

    def __init__(self):
        self.nodes: list[DiffArray] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: DiffArray) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes.clear()


def as_diff(x, dtype=None) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return DiffArray(x, dtype=dtype)


def _check_finite(out: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite value produced by primitive '{op}'")


def make_node(out: np.ndarray, parents: Sequence[DiffArray], backward: Callable, op: str) -> DiffArray:
    """Wrap a primitive's output and, when needed, attach it to the graph."""
    _check_finite(out, op)
    node = DiffArray.__new__(DiffArray)
    node.data = out
    node.grad = None
    node.name = None
    node._op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    node.requires_grad = needs
    if needs:
        node._parents = tuple(parents)
        node._backward = backward
        for tape in _active_tapes:
            tape.record(node)
    else:
        node._parents = ()
        node._backward = None
    return node


def _topological(root: DiffArray) -> list[DiffArray]:
    order: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: DiffArray, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(loss, DiffArray) or loss.size != 1:
        raise UsageError("backward() needs a scalar loss")
    if not loss.requires_grad:
        return
    if tape is not None and any(n is loss for n in tape.nodes):
        order = tape.nodes
    else:
        order = _topological(loss)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                pg = np.asarray(pg, dtype=parent.data.dtype)
                if parent.grad is None:
                    parent.grad = pg.copy()
                else:
                    parent.grad = parent.grad + pg
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


# -- elementwise and structural primitives ----------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_dtype(a: DiffArray, b: DiffArray):
    return np.result_type(a.data, b.data)


def _coerce_pair(a, b) -> tuple[DiffArray, DiffArray]:
    if isinstance(a, DiffArray) and not isinstance(b, DiffArray):
        b = DiffArray(b, dtype=a.dtype)
    elif isinstance(b, DiffArray) and not isinstance(a, DiffArray):
        a = DiffArray(a, dtype=b.dtype)
    return as_diff(a), as_diff(b)


def add(a, b) -> DiffArray:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> DiffArray:
    a, b = _coerce_pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> DiffArray:
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> DiffArray:
    a, b = _coerce_pair(a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):  # reported by make_node instead
        out = ad / bd

    def _back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_node(out, (a, b), _back, "div")


def neg(a) -> DiffArray:
    a = as_diff(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> DiffArray:
    a = as_diff(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = x ** exponent
    return make_node(out, (a,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")


def square(a) -> DiffArray:
    a = as_diff(a)
    x = a.data
    return make_node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def abs_(a) -> DiffArray:
    """|x| with subgradient 0 at x == 0."""
    a = as_diff(a)
    x = a.data
    return make_node(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def sum_(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    shape = a.shape

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), _back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> DiffArray:
    a = as_diff(a)
    src = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> DiffArray:
    a = as_diff(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                     lambda g: (g.transpose(inv),), "transpose")


def getitem(a, index) -> DiffArray:
    a = as_diff(a)
    shape, dtype = a.shape, a.dtype

    def _back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(a.data[index]), (a,), _back, "getitem")


def concat(arrays: Iterable[DiffArray], axis: int = 0) -> DiffArray:
    arrays = [as_diff(x) for x in arrays]
    if not arrays:
        raise UsageError("concat() of an empty list")
    ref = arrays[0].shape
    ax = axis % len(ref)
    for x in arrays[1:]:
        if len(x.shape) != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat shape mismatch: {ref} vs {x.shape} on axis {axis}")
    sizes = [x.shape[ax] for x in arrays]
    bounds = np.cumsum([0] + sizes)

    def _back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(arrays)))

    return make_node(np.concatenate([x.data for x in arrays], axis=ax), arrays, _back, "concat")
