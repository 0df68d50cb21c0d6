"""Synthetic benchmark instances for order learning and AUF decisions."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .graph import DirectedAcyclicGraph, ancestors, topological_order
from .scm import (AufTask, GPFunction, LinearFunction, MLPFunction, NoiseSpec, StructuralModel,
                  ZeroFunction, box_region, rbf_kernel, sample_observational)

ORDER_COEFF_RANGE = ((-1.0, -0.25), (0.25, 1.0))
AUF_COEFF_RANGE = ((-1.0, 1.0),)
MLP_WEIGHT_RANGE = ((-2.0, -0.5), (0.5, 2.0))
NOISE_PARAM_RANGE = (0.75, 1.25)


@dataclass(frozen=True)
class OrderBenchConfig:
    d: int = 10
    p: float = 0.3
    r: float = 0.5
    noise: str = "beta"
    n: int = 2000
    epochs: int = 5
    tasks: int = 4

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("edge density p must lie in (0, 1]")
        if not 0 <= self.r <= 1:
            raise ValueError("linearity r must lie in [0, 1]")
        if self.n < 2 or self.d < 1 or self.epochs < 1 or self.tasks < 1:
            raise ValueError("d, n, epochs and tasks must be positive (n >= 2)")
        if self.noise not in ("gaussian", "beta", "exponential"):
            raise ValueError(f"unknown noise family {self.noise!r}")

    @property
    def cell_id(self) -> str:
        return f"d={self.d},p={self.p:g},r={self.r:g},noise={self.noise}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AufBenchConfig:
    setting: str = "linear"
    noise: str = "beta"
    d: int = 15
    p: float = 0.3
    tasks: int = 20
    rounds: int = 50
    trials: int = 1000
    n: int = 1000
    name: str = ""

    def __post_init__(self):
        if self.setting not in ("linear", "nonlinear", "linear-gaussian"):
            raise ValueError(f"unknown setting {self.setting!r}")
        if min(self.d, self.tasks, self.rounds, self.trials, self.n) < 1:
            raise ValueError("counts must be positive")
        if self.d < 3:
            raise ValueError("an AUF task needs at least three variables")
        if not 0 < self.p <= 1:
            raise ValueError("edge density p must lie in (0, 1]")

    @property
    def setting_id(self) -> str:
        if self.name:
            return self.name
        kind = {"linear": "SynLr", "nonlinear": "SynNlr", "linear-gaussian": "PseudoRealLG"}[self.setting]
        fam = {"beta": "Beta", "exponential": "Exp", "gaussian": "Gauss"}[self.noise]
        return f"{kind}{fam}-d{self.d}"

    def to_dict(self) -> dict:
        return asdict(self)


def _check_range(coeff_range):
    if not coeff_range:
        raise ValueError("empty coefficient range")
    for lo, hi in coeff_range:
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")


def uniform_union(rng: np.random.Generator, intervals, size) -> np.ndarray:
    """Uniform draws on a union of disjoint intervals."""
    _check_range(intervals)
    lengths = np.array([hi - lo for lo, hi in intervals], dtype=float)
    if lengths.sum() == 0:
        probs = np.full(len(intervals), 1.0 / len(intervals))
    else:
        probs = lengths / lengths.sum()
    which = rng.choice(len(intervals), size=size, p=probs)
    lo = np.array([intervals[k][0] for k in np.ravel(which)]).reshape(np.shape(which))
    hi = np.array([intervals[k][1] for k in np.ravel(which)]).reshape(np.shape(which))
    return lo + (hi - lo) * rng.random(size)


def gen_er_dag(d: int, p: float, seed) -> DirectedAcyclicGraph:
    if d < 1:
        raise ValueError("d must be positive")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    rng = rngmod.as_generator(seed)
    perm = rng.permutation(d)
    keep = rng.random((d, d)) < p
    edges = [(int(perm[a]), int(perm[b])) for a in range(d) for b in range(a + 1, d) if keep[a, b]]
    return DirectedAcyclicGraph.from_edges(d, edges)


def gen_linear_fn(parents, seed, coeff_range=ORDER_COEFF_RANGE) -> LinearFunction:
    if len(parents) == 0:
        raise ValueError("a linear structural function needs parents")
    _check_range(coeff_range)
    rng = rngmod.as_generator(seed)
    return LinearFunction(parents, uniform_union(rng, coeff_range, len(parents)))


def gen_gp_fn(parents, parent_values: np.ndarray, seed, jitter: float = 1e-8,
              max_jitter: float = 1e-2) -> GPFunction:
    """Draw one RBF-GP path jointly at the rows of ``parent_values``.

    The rows become the function's anchors; jitter grows by 10x until the
    kernel matrix factorizes.
    """
    if len(parents) == 0:
        raise ValueError("a GP structural function needs parents")
    U = np.asarray(parent_values, dtype=float)
    rng = rngmod.as_generator(seed)
    K = rbf_kernel(U, U)
    jit = jitter
    while True:
        try:
            L = np.linalg.cholesky(K + jit * np.eye(len(U)))
            break
        except np.linalg.LinAlgError:
            jit *= 10.0
            if jit > max_jitter:
                raise np.linalg.LinAlgError("GP kernel matrix not factorizable within jitter budget")
    values = L @ rng.standard_normal(len(U))
    return GPFunction(parents, U, values, jit)


def gen_mlp_fn(parents, seed, hidden: int = 8, weight_range=MLP_WEIGHT_RANGE) -> MLPFunction:
    if len(parents) == 0:
        raise ValueError("an MLP structural function needs parents")
    rng = rngmod.as_generator(seed)
    sizes = [len(parents), hidden, hidden, 1]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append(uniform_union(rng, weight_range, (a, b)))
        params.append(np.zeros(b))
    return MLPFunction(parents, params)


def gen_noise(family: str, seed, param_range=NOISE_PARAM_RANGE) -> NoiseSpec:
    rng = rngmod.as_generator(seed)
    lo, hi = param_range
    if family == "gaussian":
        return NoiseSpec("gaussian", (rng.uniform(lo, hi),))
    if family == "exponential":
        return NoiseSpec("exponential", (rng.uniform(lo, hi),))
    if family == "beta":
        return NoiseSpec("beta", tuple(rng.uniform(lo, hi, size=2)))
    raise ValueError(f"unknown noise family {family!r}")


def gen_order_task(cfg: OrderBenchConfig, seed) -> StructuralModel:
    """ER graph, per-node linear (prob. ``r``) or GP function, per-node noise.

    GP paths are drawn at ``cfg.n`` simulated parent rows.
    """
    g = gen_er_dag(cfg.d, cfg.p, rngmod.stream(seed, "graph"))
    noises = tuple(gen_noise(cfg.noise, rngmod.stream(seed, "noise-spec", i)) for i in range(cfg.d))
    fns: list = [None] * cfg.d
    V = np.empty((cfg.n, cfg.d))
    for i in topological_order(g):
        pa = g.parents(i)
        eps = noises[i].sample(rngmod.stream(seed, "anchor-noise", i), cfg.n)
        if not pa:
            fns[i] = ZeroFunction()
        elif rngmod.stream(seed, "kind", i).random() < cfg.r:
            fns[i] = gen_linear_fn(pa, rngmod.stream(seed, "fn", i))
        else:
            fns[i] = gen_gp_fn(pa, V[:, pa], rngmod.stream(seed, "fn", i))
        V[:, i] = (fns[i](V[:, pa]) if pa else 0.0) + eps
    return StructuralModel(g, tuple(fns), noises)


def assign_roles(g: DirectedAcyclicGraph) -> tuple:
    """First ceil(d/5) topological nodes are context, last ceil(d/5) outcomes."""
    order = topological_order(g).perm
    k = math.ceil(g.d / 5)
    roles = ["intermediate"] * g.d
    for v in order[:k]:
        roles[v] = "context"
    for v in order[-k:]:
        roles[v] = "outcome"
    return tuple(roles)


class TaskGenerationError(RuntimeError):
    pass


def _auf_model(cfg: AufBenchConfig, seed) -> StructuralModel:
    g = gen_er_dag(cfg.d, cfg.p, rngmod.stream(seed, "graph"))
    family = "gaussian" if cfg.setting == "linear-gaussian" else cfg.noise
    noises = tuple(gen_noise(family, rngmod.stream(seed, "noise-spec", i)) for i in range(cfg.d))
    fns = []
    for i in range(cfg.d):
        pa = g.parents(i)
        if not pa:
            fns.append(ZeroFunction())
        elif cfg.setting == "nonlinear":
            fns.append(gen_mlp_fn(pa, rngmod.stream(seed, "fn", i)))
        else:
            fns.append(gen_linear_fn(pa, rngmod.stream(seed, "fn", i), AUF_COEFF_RANGE))
    return StructuralModel(g, tuple(fns), noises)


def gen_auf_task(cfg: AufBenchConfig, seed, max_attempts: int = 50,
                 max_resample: int = 100) -> tuple[StructuralModel, AufTask]:
    """Model plus task with ancestor-sampled alterables and mu/sigma boxes.

    Graphs whose outcomes have no intermediate ancestor are regenerated
    from the next derived seed.
    """
    for attempt in range(max_attempts):
        s = rngmod.seed_sequence(seed, "attempt", attempt)
        model = _auf_model(cfg, s)
        roles = assign_roles(model.graph)
        outcomes = [i for i, r in enumerate(roles) if r == "outcome"]
        candidates = [sorted(a for a in ancestors(model.graph, y) if roles[a] == "intermediate")
                      for y in outcomes]
        if not any(candidates):
            continue
        pick = rngmod.stream(s, "alterable")
        alterable: set = set()
        for _ in range(max_resample):
            alterable = set()
            for anc in candidates:
                alterable.update(a for a in anc if pick.random() < 0.5)
            if alterable:
                break
        if not alterable:
            continue
        A = tuple(sorted(alterable))
        V = sample_observational(model, cfg.n, rngmod.stream(s, "calibration"))
        mu, sd = V.mean(axis=0), V.std(axis=0, ddof=1)
        M, dvec = box_region(mu[outcomes] - sd[outcomes], mu[outcomes] + sd[outcomes])
        task = AufTask(roles, A, mu[list(A)] - 2 * sd[list(A)], mu[list(A)] + 2 * sd[list(A)], M, dvec)
        task.validate_graph(model.graph)
        return model, task
    raise TaskGenerationError(f"no task with alterable ancestors after {max_attempts} attempts")
