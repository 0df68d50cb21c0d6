"""Order learning by conditional-entropy maximization, and order-to-DAG pruning."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats
from sklearn.base import BaseEstimator
from sklearn.preprocessing import SplineTransformer
from sklearn.utils.validation import check_is_fitted

from ._validation import check_data, check_order
from .entropy import GaussianOracle, kl_entropy
from .graph import DirectedAcyclicGraph, Order, ancestral_sets, descendants, sinks
from .scm import StructuralModel

ORACLE_TIE_TOL = 1e-12


class EmpiricalEntropy:
    """Joint-entropy queries answered by the k-NN estimator, memoized per subset."""

    exact = False

    def __init__(self, X, k: int = 1, standardize: bool = False, method: str = "kdtree"):
        X = check_data(X, min_samples=k + 1)
        if standardize:
            sd = X.std(axis=0)
            X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        self.X = X
        self.k = k
        self.method = method
        self._cache: dict = {}

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __call__(self, subset) -> float:
        key = tuple(sorted(subset))
        if key not in self._cache:
            self._cache[key] = kl_entropy(self.X, self.k, key, method=self.method).value
        return self._cache[key]


class OracleEntropy:
    """Joint-entropy queries from a Gaussian covariance."""

    exact = True

    def __init__(self, oracle):
        self.oracle = oracle if isinstance(oracle, GaussianOracle) else GaussianOracle(oracle)

    @property
    def d(self) -> int:
        return self.oracle.d

    def __call__(self, subset) -> float:
        return self.oracle.entropy(sorted(subset))


def learn_order(src) -> Order:
    """Peel off sinks one at a time.

    With remaining set ``L``, the next sink is ``argmin_i h(V_{L \\ i})``,
    which maximizes ``h(V_i | V_{L \\ i})`` because ``h(V_L)`` is shared by
    every candidate. The sink is prepended to the order.
    """
    remaining = list(range(src.d))
    tail: list[int] = []
    tol = ORACLE_TIE_TOL if getattr(src, "exact", False) else 0.0
    while len(remaining) > 1:
        scores = np.array([src([v for v in remaining if v != i]) for i in remaining])
        best = scores.min()
        pick = min(i for i, s in zip(remaining, scores) if s <= best + tol)
        tail.insert(0, pick)
        remaining.remove(pick)
    return Order(tuple(remaining + tail))


# ------------------------------------------------------------------ pruning

@dataclass(frozen=True)
class PrunedGraph:
    graph: DirectedAcyclicGraph
    order: Order
    cutoff: float
    pvalues: dict


def _basis(x: np.ndarray, kind: str, n_knots: int) -> np.ndarray:
    x = x.reshape(-1, 1)
    if kind == "linear":
        return x
    if kind == "spline":
        n_unique = len(np.unique(x))
        if n_unique < 4:
            return x
        knots = max(2, min(n_knots, n_unique - 2))
        B = SplineTransformer(n_knots=knots, degree=3, knots="quantile").fit_transform(x)
        # columns sum to one; drop one to stay clear of the intercept
        return B[:, :-1]
    raise ValueError(f"unknown basis {kind!r}")


def _independent_columns(D: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    _, R, piv = linalg.qr(D, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * max(diag[0], 1e-300)).sum()) if len(diag) else 0
    keep = np.zeros(D.shape[1], dtype=bool)
    keep[piv[:rank]] = True
    return keep


def _rss(D: np.ndarray, y: np.ndarray) -> float:
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    r = y - D @ coef
    return float(r @ r)


def prune_to_dag(order, X, cutoff: float = 1e-3, basis: str = "spline", n_knots: int = 5) -> PrunedGraph:
    """Keep ``j -> i`` for predecessors ``j`` whose basis group is significant.

    Each node is regressed on the basis expansions of all its predecessors;
    every group gets a partial F-test against the fit without it.
    """
    X = check_data(X, min_samples=3)
    n, d = X.shape
    order = check_order(order, d)
    blocks = [_basis(X[:, j], basis, n_knots) for j in range(d)]
    edges, pvals = [], {}
    for pos in range(1, d):
        i = order.perm[pos]
        preds = list(order.perm[:pos])
        cols = [np.ones((n, 1))] + [blocks[j] for j in preds]
        owner = np.concatenate([[-1]] + [[j] * b.shape[1] for j, b in zip(preds, cols[1:])])
        D = np.hstack(cols)
        keep = _independent_columns(D)
        if not keep.all():
            warnings.warn(f"rank-deficient design for node {i}: dropped {int((~keep).sum())} column(s)",
                          RuntimeWarning, stacklevel=2)
            D, owner = D[:, keep], owner[keep]
        y = X[:, i]
        dof = n - D.shape[1]
        if dof <= 0:
            continue
        rss_full = _rss(D, y)
        for j in preds:
            mask = owner == j
            q = int(mask.sum())
            if q == 0:
                continue
            rss_red = _rss(D[:, ~mask], y)
            if rss_full <= 0:
                p = 0.0 if rss_red > 0 else 1.0
            else:
                F = max(rss_red - rss_full, 0.0) / q / (rss_full / dof)
                p = float(stats.f.sf(F, q, dof))
            pvals[(j, i)] = p
            if p < cutoff:
                edges.append((j, i))
    return PrunedGraph(DirectedAcyclicGraph.from_edges(d, edges), order, cutoff, pvals)


# ------------------------------------------------------------- estimator

class OLEM(BaseEstimator):
    """Learn a variable order from observational data.

    Parameters
    ----------
    k : neighbor order of the entropy estimator.
    standardize : z-score columns before estimating entropies.
    prune : also fit ``graph_`` by regression pruning at ``cutoff``.

    Attributes
    ----------
    order_ : Order
    graph_ : DirectedAcyclicGraph (when ``prune``)
    """

    def __init__(self, k=1, standardize=False, neighbor_search="kdtree", prune=True,
                 cutoff=1e-3, basis="spline", n_knots=5):
        self.k = k
        self.standardize = standardize
        self.neighbor_search = neighbor_search
        self.prune = prune
        self.cutoff = cutoff
        self.basis = basis
        self.n_knots = n_knots

    def fit(self, X, y=None):
        X = check_data(X, min_samples=self.k + 1)
        self.n_features_in_ = X.shape[1]
        src = EmpiricalEntropy(X, self.k, self.standardize, self.neighbor_search)
        self.order_ = learn_order(src)
        if self.prune:
            pruned = prune_to_dag(self.order_, X, self.cutoff, self.basis, self.n_knots)
            self.graph_ = pruned.graph
            self.pvalues_ = pruned.pvalues
        return self

    def transform(self, X):
        """Columns of ``X`` rearranged into the learned order."""
        check_is_fitted(self, "order_")
        X = check_data(X)
        return X[:, list(self.order_.perm)]


# ------------------------------------------------- assumption checking

@dataclass(frozen=True)
class AssumptionViolation:
    prefix: tuple
    sink: int
    non_sink: int
    mutual_information: float
    entropy_gap: float


def check_assumption_olem(model: StructuralModel, prefixes: str = "all"):
    """Check the sink-discrimination condition for a linear-Gaussian model.

    For every prefix set of an order, every sink ``i`` and non-sink ``j``
    of the induced subgraph must satisfy
    ``I(V_j; Des_j | W_j) > h(eps_j) - h(eps_i)``.

    ``prefixes="all"`` walks every ancestor-closed set (the prefixes of all
    orders); ``"single"`` uses the prefixes of the topological order only.
    Returns ``(holds, first_violation_or_None)``.
    """
    if not model.is_linear_gaussian():
        raise NotImplementedError("closed-form check needs a linear model with Gaussian noise")
    g = model.graph
    oracle = GaussianOracle(model.covariance())
    sigma = np.array([nz.params[0] for nz in model.noises])
    if prefixes == "all":
        sets = ancestral_sets(g)
    elif prefixes == "single":
        perm = model.order.perm
        sets = (frozenset(perm[: m + 1]) for m in range(g.d))
    else:
        raise ValueError(f"unknown prefix mode {prefixes!r}")
    desc = [descendants(g, v) for v in range(g.d)]
    for S in sets:
        nodes = sorted(S)
        sub = g.subgraph(S)
        sink_set = sinks(sub, nodes)
        for j in nodes:
            if j in sink_set:
                continue
            des = sorted(desc[j] & S)
            rest = sorted(S - set(des) - {j})
            mi = oracle.conditional_mi(j, des, rest, sigma[j])
            for i in sink_set:
                gap = np.log(sigma[j]) - np.log(sigma[i])
                if not mi > gap:
                    return False, AssumptionViolation(tuple(nodes), i, j, float(mi), float(gap))
    return True, None
