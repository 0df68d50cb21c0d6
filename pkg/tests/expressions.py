"""Random composed tensor expressions for gradient checks."""
from __future__ import annotations

import numpy as np

from rehearsal.autodiff import tensor as T

# unary ops that stay finite and smooth on any real input
UNARY = [
    T.tanh, T.sigmoid, T.softplus, T.asinh, T.logcosh, T.neg,
    lambda a: T.sinh(T.tanh(a)),
    lambda a: T.square(T.tanh(a)),
    lambda a: T.exp(T.tanh(a)),
    lambda a: T.log(T.softplus(a) + 0.1),
    lambda a: T.log1p(T.square(a)),
    lambda a: T.sqrt(T.square(a) + 1.0),
    lambda a: T.power(T.sigmoid(a) + 0.5, 1.5),
    lambda a: T.div(a, T.square(a) + 1.0),
]


def random_expression(rng: np.random.Generator, depth: int = 4):
    """Return ``(f, shapes)``: ``f`` maps numpy inputs to a scalar Tensor."""
    n, m, h = (int(v) for v in rng.integers(2, 5, size=3))
    shapes = [(n, m), (m, h), (h,)]
    plan = [int(rng.integers(len(UNARY))) for _ in range(depth)]
    mix = [int(rng.integers(4)) for _ in range(depth)]
    reduce_kind = int(rng.integers(3))

    def f(x, w, b):
        x, w, b = T.as_tensor(x), T.as_tensor(w), T.as_tensor(b)
        h_ = T.affine(x, w, b)
        for op, k in zip(plan, mix):
            nxt = UNARY[op](h_)
            if k == 0:
                h_ = nxt + h_
            elif k == 1:
                h_ = nxt * T.sigmoid(h_)
            elif k == 2:
                h_ = T.concat([T.getitem(nxt, (slice(None), slice(0, 1))), T.getitem(nxt, (slice(None), slice(1, None)))], axis=1)
            else:
                h_ = nxt
        if reduce_kind == 0:
            return T.tsum(h_)
        if reduce_kind == 1:
            return T.mean(T.tanh(h_))
        return T.tsum(T.mean(h_, axis=0) * T.mean(h_, axis=0))

    return f, shapes


def check_expression(seed: int, tol: float = 1e-4) -> tuple[bool, float]:
    """Analytic vs central-difference gradients; returns ``(ok, worst rel err)``."""
    from oracles import numeric_grad

    rng = np.random.default_rng(seed)
    f, shapes = random_expression(rng)
    inputs = [rng.normal(scale=0.7, size=s) for s in shapes]
    params = [T.parameter(v) for v in inputs]
    analytic = T.grad(f(*params), params)
    worst = 0.0
    for k in range(len(inputs)):
        def scalar(v, k=k):
            args = list(inputs)
            args[k] = v
            return f(*args).item()
        num = numeric_grad(scalar, inputs[k], h=1e-6)
        err = np.abs(analytic[k] - num) / np.maximum(1.0, np.abs(num))
        worst = max(worst, float(err.max())) if np.all(np.isfinite(err)) else np.inf
    return worst <= tol, worst
