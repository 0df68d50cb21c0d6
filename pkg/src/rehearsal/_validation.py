"""Input validation shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .graph import Order


def check_data(X, min_samples: int = 1) -> np.ndarray:
    """2-D float64 array with finite entries."""
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                       ensure_min_samples=min_samples)


def check_order(order, d: int | None = None) -> Order:
    if not isinstance(order, Order):
        order = Order(tuple(order))
    if d is not None and len(order) != d:
        raise ValueError(f"order has {len(order)} entries, data has {d} columns")
    return order
