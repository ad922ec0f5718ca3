"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation produces a :class:`Tensor` that remembers its
input tensors and a backward closure. Calling ``backward()`` on a scalar loss
walks the recorded graph in reverse topological order and accumulates
gradients into ``.grad`` of every tensor created with ``requires_grad=True``.

Everything is float64 so analytic gradients can be compared against central
finite differences at tight tolerances. Only the operations the models in
this package need are implemented; each backward formula is hand-derived and
covered by the finite-difference suite in the tests.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "tensor",
    "concat",
    "gather_rows",
    "pick",
    "softmax",
    "log_softmax",
]

_GRAD_ENABLED = True


def grad_enabled():
    return _GRAD_ENABLED


class no_grad:
    """Context manager disabling tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # collapse leading broadcast axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = ()
        self._backward = None

    # -- tape construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(p for p in parents if p.requires_grad) if track else ()
        out._backward = backward if track else None
        return out

    def _accumulate(self, grad):
        # rebinding (never in-place) keeps aliased first-writes harmless
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    # -- properties ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-tensor(other))

    def __rsub__(self, other):
        return tensor(other) + (-self)

    def __mul__(self, other):
        other = tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other):
        other = tensor(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
        out_data = a @ b

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ b.T)
            if other.requires_grad:
                other._accumulate(a.T @ g)

        return Tensor._make(out_data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        src_shape = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(src_shape))

        return Tensor._make(out_data, (self,), backward)

    @property
    def T(self):
        out_data = self.data.T.copy()

        def backward(g):
            self._accumulate(g.T)

        return Tensor._make(out_data, (self,), backward)

    def __getitem__(self, key):
        # basic indexing only (ints/slices); fancy lookups go through
        # gather_rows/pick, whose scatter handles repeated indices
        out_data = self.data[key]
        if np.isscalar(out_data):
            out_data = np.asarray(out_data)
        src_shape = self.data.shape

        def backward(g):
            full = np.zeros(src_shape)
            full[key] += g
            self._accumulate(full)

        return Tensor._make(np.ascontiguousarray(out_data), (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        src_shape = self.data.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src_shape).copy())

        return Tensor._make(np.asarray(out_data), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise nonlinearities ---------------------------------------------

    def tanh(self):
        t = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - t * t))

        return Tensor._make(t, (self,), backward)

    def sigmoid(self):
        s = _stable_sigmoid(self.data)

        def backward(g):
            self._accumulate(g * s * (1.0 - s))

        return Tensor._make(s, (self,), backward)

    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0)

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._make(out_data, (self,), backward)

    def exp(self):
        e = np.exp(self.data)

        def backward(g):
            self._accumulate(g * e)

        return Tensor._make(e, (self,), backward)

    def log(self):
        x = self.data

        def backward(g):
            self._accumulate(g / x)

        return Tensor._make(np.log(x), (self,), backward)

    # -- backward pass ---------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor with no graph")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def tensor(value, requires_grad=False):
    """Coerce ``value`` to a Tensor (arrays/scalars become constants)."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad)


def concat(tensors, axis=0):
    tensors = [tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return Tensor._make(out_data, tuple(tensors), backward)


def gather_rows(table, indices):
    """Row lookup ``table[indices]`` (embedding fetch); repeats accumulate."""
    table = tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return Tensor._make(out_data, (table,), backward)


def pick(t, cols):
    """Per-row element selection: ``out[i] = t[i, cols[i]]``."""
    t = tensor(t)
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(t.data.shape[0])
    out_data = t.data[rows, cols].copy()

    def backward(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, cols), g)
        t._accumulate(full)

    return Tensor._make(out_data, (t,), backward)


def softmax(t, axis=-1):
    t = tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        t._accumulate(s * (g - inner))

    return Tensor._make(s, (t,), backward)


def log_softmax(t, axis=-1):
    t = tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out_data = z - lse
    s = np.exp(out_data)

    def backward(g):
        t._accumulate(g - s * g.sum(axis=axis, keepdims=True))

    return Tensor._make(out_data, (t,), backward)
