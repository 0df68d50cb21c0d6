"""Differential entropy: k-NN (Kozachenko-Leonenko) estimates and Gaussian closed forms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from ._validation import check_data

LOG_2PIE = np.log(2 * np.pi * np.e)


class EntropyEstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    k: int
    n: int
    dims: tuple

    def __float__(self):
        return float(self.value)


def log_unit_ball_volume(m: int) -> float:
    return 0.5 * m * np.log(np.pi) - gammaln(0.5 * m + 1)


def _knn_distances(X: np.ndarray, k: int, method: str) -> np.ndarray:
    if method == "brute":
        diff = X[:, None, :] - X[None, :, :]
        D = np.sqrt((diff * diff).sum(-1))
        np.fill_diagonal(D, np.inf)
        return np.partition(D, k - 1, axis=1)[:, k - 1]
    if method == "kdtree":
        dist, _ = cKDTree(X).query(X, k=k + 1)
        return dist[:, k]
    raise ValueError(f"unknown neighbor search {method!r}")


def kl_entropy(data, k: int = 1, cols=None, *, jitter: float = 1e-10, seed=0,
               method: str = "kdtree") -> EntropyEstimate:
    """Kozachenko-Leonenko estimate in nats.

    ``psi(n) - psi(k) + log V_m + (m/n) * sum_i log rho_ik`` with Euclidean
    k-th neighbor distances ``rho_ik``. If duplicate points make some
    distance zero, every column gets uniform jitter of half-width
    ``jitter * std`` and the search is repeated.
    """
    X = check_data(data)
    dims = tuple(range(X.shape[1])) if cols is None else tuple(int(c) for c in cols)
    if not dims:
        raise EntropyEstimationError("column subset must be nonempty")
    X = X[:, list(dims)]
    n, m = X.shape
    k = int(k)
    if k < 1 or n <= k:
        raise EntropyEstimationError(f"need n > k >= 1, got n={n}, k={k}")
    rho = _knn_distances(X, k, method)
    if np.any(rho <= 0):
        scale = jitter * X.std(axis=0)
        rng = np.random.default_rng(seed)
        Xj = X + rng.uniform(-1.0, 1.0, size=X.shape) * scale
        rho = _knn_distances(Xj, k, method)
        if np.any(rho <= 0):
            raise EntropyEstimationError("degenerate sample: coincident points remain after jitter")
    value = digamma(n) - digamma(k) + log_unit_ball_volume(m) + m * np.mean(np.log(rho))
    return EntropyEstimate(float(value), k, n, dims)


def conditional_entropy(data, target: int, conditioning=(), k: int = 1, **kw) -> float:
    """``h(V_target | V_cond) = h(V_target, V_cond) - h(V_cond)``."""
    cond = [int(c) for c in conditioning if int(c) != int(target)]
    joint = kl_entropy(data, k, [int(target)] + cond, **kw).value
    if not cond:
        return joint
    return joint - kl_entropy(data, k, cond, **kw).value


class GaussianOracle:
    """Closed-form entropies of a multivariate normal with covariance ``cov``."""

    def __init__(self, cov):
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)
        self.cov = cov

    @property
    def d(self) -> int:
        return self.cov.shape[0]

    @classmethod
    def from_model(cls, model) -> "GaussianOracle":
        return cls(model.covariance())

    def _sub(self, subset) -> np.ndarray:
        idx = [int(i) for i in subset]
        if not idx:
            raise ValueError("subset must be nonempty")
        return self.cov[np.ix_(idx, idx)]

    def entropy(self, subset) -> float:
        S = self._sub(subset)
        sign, logdet = np.linalg.slogdet(S)
        if sign <= 0:
            raise np.linalg.LinAlgError("principal submatrix is not positive definite")
        np.linalg.cholesky(S)
        return 0.5 * (len(S) * LOG_2PIE + logdet)

    def conditional_entropy(self, target: int, conditioning=()) -> float:
        cond = [c for c in conditioning if c != target]
        h = self.entropy([target] + cond)
        return h - self.entropy(cond) if cond else h

    def conditional_mi(self, j: int, descendants, rest, sigma_j: float) -> float:
        """``I(V_j; Des | W) = 0.5 * log(sigma_j^2 * Omega_jj)``.

        ``Omega`` is the precision matrix over ``rest + [j] + descendants``;
        valid when ``rest`` holds the parents and no descendants of ``j``.
        """
        idx = [int(i) for i in rest] + [int(j)] + [int(i) for i in descendants]
        omega = np.linalg.inv(self._sub(idx))
        pos = len(list(rest))
        return 0.5 * np.log(sigma_j ** 2 * omega[pos, pos])


def gaussian_entropy(oracle: GaussianOracle, subset) -> float:
    return oracle.entropy(subset)


def gaussian_conditional_mi(oracle: GaussianOracle, j: int, descendants, rest, sigma_j: float) -> float:
    return oracle.conditional_mi(j, descendants, rest, sigma_j)
