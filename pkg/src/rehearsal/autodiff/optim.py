from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        st = cls(**kw)
        st.m = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
        st.v = [np.zeros_like(np.asarray(p, dtype=float)) for p in params]
        return st


def adam_step(state: AdamState, params, grads) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    Raises ``FloatingPointError`` and leaves ``state`` untouched when any
    gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for k, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g) or np.shape(p) != state.m[k].shape:
            raise ValueError(f"shape mismatch for parameter {k}: {np.shape(p)} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {k}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out.append(np.asarray(p, dtype=float) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out
