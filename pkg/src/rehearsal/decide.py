"""Decision optimization for AUF tasks: Chebyshev centers, success estimates, Adam."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as rngmod
from .autodiff import AdamState, adam_step
from .autodiff import tensor as T
from .flows import JointSampler, TrainConfig, build_joint_sampler, fit_flow_stack
from .olem import EmpiricalEntropy, learn_order
from .scm import AufTask
from ._validation import check_data


class RegionError(ValueError):
    pass


class DecisionError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


def _box_bounds(M: np.ndarray, d: np.ndarray):
    """``(lo, hi)`` when every row is a signed unit vector covering each axis both ways."""
    m = M.shape[1]
    lo, hi = np.full(m, -np.inf), np.full(m, np.inf)
    for row, b in zip(M, d):
        nz = np.flatnonzero(row)
        if len(nz) != 1:
            return None
        j = nz[0]
        s = row[j]
        if s > 0:
            hi[j] = min(hi[j], b / s)
        else:
            lo[j] = max(lo[j], b / s)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return None
    return lo, hi


def chebyshev_center(M, d) -> tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside ``{y : M y <= d}``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    if M.shape[0] == 0 or M.size == 0:
        raise RegionError("region without constraints is unbounded")
    if M.shape[0] != d.shape[0]:
        raise ValueError("M and d disagree on the number of constraints")
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        raise RegionError("constraint rows must be nonzero")
    box = _box_bounds(M, d)
    if box is not None:
        lo, hi = box
        if np.any(lo > hi):
            raise RegionError("region is empty")
        return 0.5 * (lo + hi), float(0.5 * np.min(hi - lo))
    m = M.shape[1]
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=np.column_stack([M, norms]), b_ub=d,
                  bounds=[(None, None)] * m + [(0, None)], method="highs")
    if res.status == 2:
        raise RegionError("region is empty")
    if res.status == 3:
        raise RegionError("region is unbounded")
    if res.status != 0:
        raise RegionError(f"linear program failed: {res.message}")
    return res.x[:m], float(res.x[m])


def estimate_success(Y, M, d, tol: float = 1e-12) -> float:
    """Fraction of rows of ``Y`` satisfying ``M y <= d``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    M = np.asarray(M, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    if Y.shape[0] < 1:
        raise ValueError("need at least one sample")
    if M.size == 0:
        return 1.0
    M = np.atleast_2d(M)
    if M.shape[1] != Y.shape[1] or M.shape[0] != d.shape[0]:
        raise ValueError(f"region of shape {M.shape} does not match outcomes of width {Y.shape[1]}")
    return float(np.mean(np.all(Y @ M.T <= d + tol, axis=1)))


@dataclass(frozen=True)
class OptConfig:
    n: int = 1000
    lr: float = 0.5
    iterations: int = 200
    restarts: int = 3

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one noise sample")
        if self.restarts < 1 or self.iterations < 0:
            raise ValueError("restarts must be positive and iterations non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecisionResult:
    z_star: np.ndarray
    trace: np.ndarray          # (restarts, iterations + 1) surrogate values
    est_success: float
    surrogate: float
    center: np.ndarray
    radius: float
    restart: int
    true_success: float | None = None
    restart_success: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("z_star", "trace", "center"):
            out[k] = np.asarray(out[k]).tolist()
        return out


def _initial_points(task: AufTask, restarts: int, rng) -> np.ndarray:
    lo, hi = task.domain_lo, task.domain_hi
    rows = [task.domain_mid]
    for _ in range(restarts - 1):
        rows.append(lo + (hi - lo) * rng.random(len(lo)))
    return np.array(rows, dtype=float)


def optimize_decision(sampler: JointSampler, task: AufTask, x, cfg: OptConfig = OptConfig(),
                      seed=0, center=None) -> DecisionResult:
    """Projected Adam on ``mean ||T_Y(N, x, z) - c||_1`` over the decision box.

    All restarts run as one batch; each owns a frozen standard-normal noise
    block. The clamp onto the box happens after every step, off the tape.
    The returned restart has the highest estimated success on a shared
    evaluation batch (ties go to the lower surrogate value).
    """
    x, _ = task.check_decision(x, task.domain_mid)
    if center is None:
        c, r = chebyshev_center(task.region_M, task.region_d)
    else:
        c, r = np.asarray(center[0], dtype=float), float(center[1])
    R, n, nA = cfg.restarts, cfg.n, len(task.alterable)
    lo, hi = task.domain_lo, task.domain_hi
    Z = _initial_points(task, R, rngmod.stream(seed, "init"))
    noise = np.vstack([rngmod.stream(seed, "noise", k).standard_normal((n, task.d)) for k in range(R)])
    cache = sampler.precompute(noise, x, sampler.needed_for_y)
    opt = AdamState.for_params([Z], lr=cfg.lr)
    trace = np.full((R, cfg.iterations + 1), np.nan)
    alive = np.ones(R, dtype=bool)

    def objective(Zcur):
        zt = T.parameter(Zcur)
        Y = sampler.sample_y_tape(noise, x, zt, cache)
        per_row = T.tsum(T.abs(T.sub(Y, c)), axis=1)
        per_restart = T.reshape(per_row, (R, n))
        vals = T.mean(per_restart, axis=1)
        return zt, T.tsum(vals), vals.numpy()

    for it in range(cfg.iterations + 1):
        zt, total, vals = objective(Z)
        trace[:, it] = np.where(alive, vals, np.nan)
        alive &= np.isfinite(vals)
        if it == cfg.iterations or not alive.any():
            break
        g = T.grad(total, [zt])[0]
        g = np.where(alive[:, None] & np.isfinite(g), g, 0.0)
        Z = np.clip(adam_step(opt, [Z], [g])[0], lo, hi)
    if not alive.any():
        raise DecisionError("every restart produced a non-finite objective", trace)
    final = trace[np.arange(R), cfg.iterations] if cfg.iterations else trace[:, 0]
    eval_noise = rngmod.stream(seed, "eval").standard_normal((n, task.d))
    succ = []
    for k in range(R):
        if not alive[k]:
            succ.append(-1.0)
            continue
        Yk = sampler.sample_y(eval_noise, x, Z[k])
        succ.append(estimate_success(Yk, task.region_M, task.region_d))
    best = min(range(R), key=lambda k: (-succ[k], final[k] if np.isfinite(final[k]) else np.inf, k))
    return DecisionResult(Z[best].copy(), trace, float(succ[best]), float(final[best]), c, r, best,
                          restart_success=[float(s) for s in succ])


class OLEMRh(BaseEstimator):
    """Learn an order, fit one flow per node, then optimize decisions per context.

    ``fit`` caches the order, the flows and the sampler so that ``decide``
    only pays for the decision optimization.
    """

    def __init__(self, k=1, standardize=False, train_config=None, opt_config=None, random_state=0,
                 jobs=1):
        self.k = k
        self.standardize = standardize
        self.train_config = train_config
        self.opt_config = opt_config
        self.random_state = random_state
        self.jobs = jobs

    def fit(self, X, task: AufTask):
        X = check_data(X, min_samples=self.k + 1)
        if X.shape[1] != task.d:
            raise ValueError(f"data has {X.shape[1]} columns, task has {task.d} variables")
        self.task_ = task
        self.order_ = learn_order(EmpiricalEntropy(X, self.k, self.standardize))
        cfg = self.train_config or TrainConfig()
        self.flows_ = fit_flow_stack(X, self.order_, cfg, rngmod.seed_sequence(self.random_state, "flows"),
                                     jobs=self.jobs)
        self.sampler_ = build_joint_sampler(self.flows_, task)
        self.center_ = chebyshev_center(task.region_M, task.region_d)
        return self

    def decide(self, x, seed=None) -> DecisionResult:
        check_is_fitted(self, "sampler_")
        seed = rngmod.seed_sequence(self.random_state, "decide") if seed is None else seed
        return optimize_decision(self.sampler_, self.task_, x, self.opt_config or OptConfig(), seed,
                                 center=self.center_)

    def predict(self, X_context) -> np.ndarray:
        """One decision per context row."""
        Xc = np.atleast_2d(np.asarray(X_context, dtype=float))
        return np.array([self.decide(row, rngmod.seed_sequence(self.random_state, "predict", k)).z_star
                         for k, row in enumerate(Xc)])


def olem_rh(data, task: AufTask, x, train_config=None, opt_config=None, seed=0) -> DecisionResult:
    return OLEMRh(train_config=train_config, opt_config=opt_config, random_state=seed).fit(data, task).decide(x)
