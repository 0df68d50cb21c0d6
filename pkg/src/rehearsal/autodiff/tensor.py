"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive records its parents and a vector-Jacobian rule. Nodes that do
not depend on any ``requires_grad`` leaf are not recorded, so constant
subexpressions cost only their forward evaluation.

Broadcasting is restricted to equal shapes, scalar-tensor, and
matrix-row-vector pairs (a 1-D operand whose length matches the last axis of
a 2-D operand).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    # operators
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every grad-requiring leaf."""
        grads = _backprop(self)
        for node, g in grads.values():
            if not node._parents and node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else x)


def parameter(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def _node(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _check_pair(a: np.ndarray, b: np.ndarray, op: str):
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 2 and b.ndim == 1 and sb[0] == sa[1]:
        return
    if b.ndim == 2 and a.ndim == 1 and sa[0] == sb[1]:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=0)


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a.data, b.data, "mul")
    av, bv = a.data, b.data
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a.data, b.data, "div")
    av, bv = a.data, b.data
    out = av / bv
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.data, b.data
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    if bv.ndim == 1:
        return _node(av @ bv, (a, b), lambda g: (np.outer(g, bv), av.T @ g))
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` as one node; ``x`` is (n, k), ``w`` is (k, m), ``b`` is (m,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xv, wv = x.data, w.data
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0] or b.shape != (wv.shape[1],):
        raise ShapeError(f"affine: shapes {xv.shape}, {wv.shape}, {b.shape}")
    return _node(xv @ wv + b.data, (x, w, b), lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(av ** p, (a,), lambda g: (g * p * av ** (p - 1),))


# ----------------------------------------------------------------- unary ops

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(np.log(av), (a,), lambda g: (g / av,))


def log1p(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(np.log1p(av), (a,), lambda g: (g / (1.0 + av),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(np.logaddexp(0.0, av), (a,), lambda g: (g * expit(av),))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    av = a.data
    return _node(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def sinh(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(np.sinh(av), (a,), lambda g: (g * np.cosh(av),))


def asinh(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    return _node(np.arcsinh(av), (a,), lambda g: (g / np.sqrt(1.0 + av * av),))


def logcosh(a) -> Tensor:
    a = as_tensor(a)
    av = a.data
    out = np.logaddexp(av, -av) - np.log(2.0)
    return _node(out, (a,), lambda g: (g * np.tanh(av),))


def clamp(a, lo, hi) -> Tensor:
    """Hard clamp. Not recorded on the tape: the result is a constant."""
    return Tensor(np.clip(as_tensor(a).data, lo, hi))


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return _node(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / n)


# ----------------------------------------------------------- structural ops

def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = all(isinstance(k, (int, np.integer, slice)) for k in (idx if isinstance(idx, tuple) else (idx,)))

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), vjp)


def stack(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis if axis >= 0 else out.ndim + axis
    return _node(out, tuple(ts),
                 lambda g: tuple(np.take(g, k, axis=ax) for k in range(len(ts))))


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ------------------------------------------------------------------ backprop

def _backprop(out: Tensor) -> dict:
    if out.data.size != 1:
        raise ShapeError(f"gradient needs a scalar output, got shape {out.shape}")
    order = []
    seen = set()
    stack_ = [(out, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    grads = {id(out): (out, np.ones_like(out.data))}
    for node in reversed(order):
        entry = grads.get(id(node))
        if entry is None or node._vjp is None:
            continue
        pgrads = node._vjp(entry[1])
        for p, g in zip(node._parents, pgrads):
            if not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = (p, g if prev is None else prev[1] + g)
    return grads


def grad(out: Tensor, params) -> list[np.ndarray]:
    """Gradients of scalar ``out`` with respect to each tensor in ``params``.

    Parameters not reachable from ``out`` get zero gradients.
    """
    if not out.requires_grad:
        if out.data.size != 1:
            raise ShapeError(f"gradient needs a scalar output, got shape {out.shape}")
        return [np.zeros_like(p.data) for p in params]
    grads = _backprop(out)
    return [grads[id(p)][1] if id(p) in grads else np.zeros_like(p.data) for p in params]
