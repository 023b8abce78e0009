"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is 64-bit: single precision would make the finite-difference
gradient checks that guard this package meaningless. Ops build a computation
graph while gradients are enabled; :func:`backward` walks the graph in
reverse topological order and accumulates into the ``grad`` array of every
reachable leaf. Under :func:`no_grad` the same ops return plain constants,
so inference and detached teacher extraction carry no graph.

All ops are deterministic: matrix products go through BLAS with a fixed
thread count, scatter-accumulation uses ``np.add.at`` (sequential, index
order), so two runs over the same inputs produce bit-identical outputs.
"""

from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A graph node holding a row-major float64 array.

    Leaf tensors created with ``requires_grad=True`` (usually via
    :class:`Parameter`) receive gradient accumulation during
    :func:`backward`; interior nodes only carry transient gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjps: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)


class Parameter(Tensor):
    """A trainable leaf tensor. ``grad`` is always allocated and zeroed."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.trainable = trainable


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents, vjps) -> Tensor:
    """Build an op output, recording only parents that need gradients."""
    out = Tensor(data)
    if _grad_enabled:
        kept = [(p, v) for p, v in zip(parents, vjps) if p.requires_grad]
        if kept:
            out.requires_grad = True
            out._parents = tuple(p for p, _ in kept)
            out._vjps = tuple(v for _, v in kept)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise ops (numpy broadcasting rules apply)
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data * b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return _node(
        a.data / b.data,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.data, a.data.shape),
            lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), (lambda g: -g,))


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    return _node(a.data ** e, (a,), (lambda g: g * e * a.data ** (e - 1.0),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _node(out_data, (a,), (lambda g: g * out_data,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), (lambda g: g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _node(out_data, (a,), (lambda g: g * 0.5 / out_data,))


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return _node(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over matching leading dimensions."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} x {b.shape}")
    return _node(
        np.matmul(a.data, b.data),
        (a, b),
        (
            lambda g: np.matmul(g, b.data.swapaxes(-1, -2)),
            lambda g: np.matmul(a.data.swapaxes(-1, -2), g),
        ),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a rank-2 tensor, got shape {a.shape}")
    return _node(a.data.T, (a,), (lambda g: g.T,))


def permute(a: Tensor, axes: tuple) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), (lambda g: g.transpose(inverse),))


def reshape(a: Tensor, shape) -> Tensor:
    original = a.data.shape
    return _node(a.data.reshape(shape), (a,), (lambda g: g.reshape(original),))


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape)
        g_expanded = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_expanded, a.data.shape)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), (vjp,))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, a.data.shape)
        g_expanded = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_expanded / count, a.data.shape)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), (vjp,))


# ---------------------------------------------------------------------------
# Indexing and shape surgery
# ---------------------------------------------------------------------------

def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; the gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows expects a rank-2 table, got shape {table.shape}")

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return out

    return _node(table.data[ids], (table,), (vjp,))


def halves(a: Tensor) -> tuple:
    """Split the last axis into two equal halves."""
    n = a.shape[-1]
    if n % 2 != 0:
        raise ShapeError(f"halves requires an even last axis, got shape {a.shape}")
    h = n // 2

    def vjp_first(g):
        out = np.zeros_like(a.data)
        out[..., :h] = g
        return out

    def vjp_second(g):
        out = np.zeros_like(a.data)
        out[..., h:] = g
        return out

    first = _node(np.ascontiguousarray(a.data[..., :h]), (a,), (vjp_first,))
    second = _node(np.ascontiguousarray(a.data[..., h:]), (a,), (vjp_second,))
    return first, second


def hcat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    na = a.shape[-1]
    return _node(
        np.concatenate([a.data, b.data], axis=-1),
        (a, b),
        (lambda g: g[..., :na], lambda g: g[..., na:]),
    )


def custom_node(data: np.ndarray, parents, vjps) -> Tensor:
    """Public hook for ops with hand-written vector-Jacobian products."""
    return _node(data, parents, vjps)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    ``loss`` must be a scalar. Gradients add onto existing ``grad`` contents,
    so callers zero them between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    # Iterative post-order DFS; recursion would overflow on long chains.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution
