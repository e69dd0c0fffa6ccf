"""Reverse-mode differentiation over numpy arrays.

Every operation returns a :class:`Var`. When none of the inputs require a
gradient the result is a plain leaf and no graph is recorded, so the same
code path serves training and read-only inference.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, StateError

DTYPE = np.float64


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Var, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __array__(self, dtype=None, copy=None):
        return self.value if dtype is None else self.value.astype(dtype)

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_var(other)))

    def __rsub__(self, other):
        return add(as_var(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if not self.requires_grad or self._backward is None:
            raise StateError("backward() called on a value with no recorded forward computation")
        if self.value.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")

        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _result(value, parents: tuple[Var, ...], backward) -> Var:
    out = Var(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _result(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Var) -> Var:
    return _result(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _result(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Var:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    a, b = as_var(a), as_var(b)
    if b.value.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.value.T
        a2 = a.value.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.value @ b.value, (a, b), backward)


def sigmoid(a: Var) -> Var:
    s = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return _result(a.value * mask, (a,), lambda g: (g * mask,))


def exp(a: Var) -> Var:
    e = np.exp(a.value)
    return _result(e, (a,), lambda g: (g * e,))


def log(a: Var) -> Var:
    return _result(np.log(a.value), (a,), lambda g: (g / a.value,))


def reshape(a: Var, shape) -> Var:
    return _result(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Var, axes=None) -> Var:
    inv = None if axes is None else np.argsort(axes)
    return _result(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def total(a: Var, axis=None, keepdims: bool = False) -> Var:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return mul(total(a, axis=axis), 1.0 / n)


def getitem(a: Var, index) -> Var:
    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.value[index], (a,), backward)


def concat(parts: list, axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    ax = axis % parts[0].value.ndim
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([p.value for p in parts], axis=ax), tuple(parts), backward)


def stack(parts: list, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([p.value for p in parts], axis=axis), tuple(parts), backward)


def softmax(a: Var, axis: int = -1) -> Var:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (a,), backward)


def log_softmax(a: Var, axis: int = -1) -> Var:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward)


def im2col_conv1d(x: Var, w: Var, b: Var, stride: int) -> Var:
    """Batched 1-D cross-correlation.

    ``x`` is (batch, t, c_in), ``w`` is (k * c_in, f) and the result is
    (batch, o, f) with ``o = (t - k) // stride + 1``.
    """
    batch, t, c_in = x.shape
    k = w.shape[0] // c_in
    o = (t - k) // stride + 1
    rows = (np.arange(o) * stride)[:, None] + np.arange(k)[None, :]
    patches = x.value[:, rows, :].reshape(batch, o, k * c_in)
    out = patches @ w.value + b.value

    def backward(g):
        gw = patches.reshape(-1, k * c_in).T @ g.reshape(-1, g.shape[-1])
        gb = g.sum(axis=(0, 1))
        gp = (g @ w.value.T).reshape(batch, o, k, c_in)
        gx = np.zeros_like(x.value)
        np.add.at(gx, (slice(None), rows), gp)
        return gx, gw, gb

    return _result(out, (x, w, b), backward)
