"""Feedforward networks as plain lists of weight arrays."""
from __future__ import annotations

import numpy as np

from . import tensor as T


def init_mlp(sizes, rng: np.random.Generator, out_scale: float = 1.0) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases: ``[W0, b0, W1, b1, ...]``."""
    params = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        if k == len(sizes) - 2:
            w = w * out_scale
        params.extend([w, np.zeros(fan_out)])
    return params


def mlp(x, params, activation=T.tanh) -> T.Tensor:
    """Hidden layers use ``activation``; the last layer is linear."""
    h = x
    n_layers = len(params) // 2
    for k in range(n_layers):
        h = T.affine(h, params[2 * k], params[2 * k + 1])
        if k < n_layers - 1:
            h = activation(h)
    return h


def mlp_numpy(x: np.ndarray, params, activation=np.tanh) -> np.ndarray:
    h = x
    n_layers = len(params) // 2
    for k in range(n_layers):
        h = h @ params[2 * k] + params[2 * k + 1]
        if k < n_layers - 1:
            h = activation(h)
    return h


def params_to_dict(params) -> dict:
    """Shape-tagged flat arrays, JSON friendly."""
    return {"params": [{"shape": list(np.shape(p)), "values": np.ravel(p).tolist()} for p in params]}


def params_from_dict(blob: dict) -> list[np.ndarray]:
    return [np.asarray(e["values"], dtype=float).reshape(e["shape"]) for e in blob["params"]]
