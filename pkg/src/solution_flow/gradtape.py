"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Value` objects.
Values that do not belong to a tape are constants: operations that only touch
constants are evaluated eagerly and nothing is recorded, which is how the
no-grad forward passes (targets, guidance velocities, sampling) stay cheap.

Example::

    tape = Tape()
    w = tape.param(np.ones((2, 2)))
    loss = mean(square(w @ x))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "Value",
    "add",
    "as_value",
    "broadcast_to",
    "concat",
    "constant",
    "cos",
    "exp",
    "matmul",
    "mean",
    "mul",
    "neg",
    "relu",
    "scale",
    "silu",
    "sin",
    "slice_rows",
    "square",
    "stop_gradient",
    "sub",
    "sum",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested primitive."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")


class _Node:
    __slots__ = ("parents", "vjp", "is_leaf")

    def __init__(self, parents, vjp, is_leaf=False):
        self.parents = parents
        self.vjp = vjp
        self.is_leaf = is_leaf


class Value:
    """A float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node_id", "__weakref__")

    # Keep numpy from hijacking ``ndarray <op> Value``.
    __array_ufunc__ = None

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError("value", arr.shape)
        self.data = arr
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def __repr__(self):
        tag = f"node={self.node_id}" if self.tracked else "const"
        return f"Value(shape={self.shape}, {tag})"

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """Append-only record of primitives; append order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def param(self, data) -> Value:
        """Register a leaf whose gradient is wanted."""
        self.nodes.append(_Node((), None, is_leaf=True))
        return Value(data, self, len(self.nodes) - 1)

    def record(self, data: np.ndarray, parents: Sequence[int | None], vjp: Callable) -> Value:
        self.nodes.append(_Node(tuple(parents), vjp))
        return Value(data, self, len(self.nodes) - 1)

    def backward(self, loss: Value) -> dict[Value, np.ndarray]:
        """Return gradients of a scalar ``loss`` for every leaf on this tape.

        The returned mapping is keyed by leaf ``Value`` objects created with
        :meth:`param` and reachable from the caller; unreachable leaves get zeros.
        """
        if loss.tape is not self:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError("backward(non-scalar loss)", loss.shape)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for i in range(loss.node_id, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.is_leaf:
                continue
            needs = tuple(p is not None for p in node.parents)
            for p, pg in zip(node.parents, node.vjp(g, needs)):
                if p is None:
                    continue
                if grads[p] is None:
                    grads[p] = pg
                else:
                    grads[p] = grads[p] + pg
        return _LeafGrads(self, grads)


class _LeafGrads(dict):
    """Lazy leaf-gradient lookup; missing entries are zero arrays."""

    def __init__(self, tape, grads):
        super().__init__()
        self._tape = tape
        self._grads = grads

    def __missing__(self, leaf: Value):
        if leaf.tape is not self._tape or not self._tape.nodes[leaf.node_id].is_leaf:
            raise KeyError(leaf)
        g = self._grads[leaf.node_id]
        g = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)
        self[leaf] = g
        return g


def constant(data) -> Value:
    return Value(data)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def stop_gradient(v: Value) -> Value:
    """Same data, detached from every tape."""
    v = as_value(v)
    return Value(v.data)


def _tape_of(*vals: Value) -> Tape | None:
    tape = None
    for v in vals:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = v.tape
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _emit(out: np.ndarray, inputs: Sequence[Value], vjp: Callable) -> Value:
    tape = _tape_of(*inputs)
    if tape is None:
        return Value(out)
    return tape.record(out, [v.node_id for v in inputs], vjp)


def _broadcast_shape(op, a: Value, b: Value):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return _emit(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                -_unbroadcast(g, sb) if needs[1] else None)

    return _emit(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (_unbroadcast(g * bd, ad.shape) if needs[0] else None,
                _unbroadcast(g * ad, bd.shape) if needs[1] else None)

    return _emit(ad * bd, (a, b), vjp)


def scale(a, c: float) -> Value:
    a = as_value(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g, needs: (g * c,))


def neg(a) -> Value:
    return scale(a, -1.0)


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (g @ bd.T if needs[0] else None,
                ad.T @ g if needs[1] else None)

    return _emit(ad @ bd, (a, b), vjp)


def sum(a, axis: int | None = None) -> Value:  # noqa: A001 - mirrors numpy
    a = as_value(a)
    shape = a.shape
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"sum(axis={axis})", shape)

    def vjp(g, needs):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(np.sum(a.data, axis=axis), (a,), vjp)


def mean(a, axis: int | None = None) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def square(a) -> Value:
    a = as_value(a)
    ad = a.data
    return _emit(ad * ad, (a,), lambda g, needs: (2.0 * ad * g,))


def sin(a) -> Value:
    a = as_value(a)
    ad = a.data
    return _emit(np.sin(ad), (a,), lambda g, needs: (np.cos(ad) * g,))


def cos(a) -> Value:
    a = as_value(a)
    ad = a.data
    return _emit(np.cos(ad), (a,), lambda g, needs: (-np.sin(ad) * g,))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g, needs: (out * g,))


def relu(a) -> Value:
    a = as_value(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g, needs: (g * mask,))


def silu(a) -> Value:
    """x * sigmoid(x)."""
    a = as_value(a)
    x = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    out = x * sig

    def vjp(g, needs):
        return (g * (sig + out * (1.0 - sig)),)

    return _emit(out, (a,), vjp)


def concat(values: Sequence, axis: int = -1) -> Value:
    vals = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in vals], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(v.shape for v in vals)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [v.shape[ax] for v in vals])

    def vjp(g, needs):
        res = []
        for k, need in enumerate(needs):
            if not need:
                res.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[k], bounds[k + 1])
            res.append(g[tuple(idx)])
        return res

    return _emit(out, vals, vjp)


def slice_rows(a, start: int, stop: int) -> Value:
    """Rows ``start:stop`` of a 1-D or 2-D value."""
    a = as_value(a)
    n = a.shape[0] if a.data.ndim else 0
    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice[{start}:{stop}]", a.shape)
    shape = a.shape

    def vjp(g, needs):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit(a.data[start:stop], (a,), vjp)


def broadcast_to(a, shape: tuple[int, ...]) -> Value:
    a = as_value(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", a.shape, tuple(shape)) from None
    src = a.shape
    return _emit(out, (a,), lambda g, needs: (_unbroadcast(g, src),))
