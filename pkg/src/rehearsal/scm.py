"""Additive-noise structural models, AUF tasks and exact simulators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import rng as rngmod
from .autodiff import tensor as T
from .autodiff.nn import mlp, mlp_numpy
from .graph import DirectedAcyclicGraph, Order, StructuralError, ancestors, descendants, topological_order

ROLES = ("context", "intermediate", "outcome")
NOISE_FAMILIES = ("gaussian", "beta", "exponential")


# -------------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseSpec:
    """``gaussian(sigma)``, ``exponential(rate)`` or ``beta(a, b)``.

    With ``centering`` the draws are shifted to mean zero.
    """

    family: str
    params: tuple
    centering: bool = False

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        want = {"gaussian": 1, "exponential": 1, "beta": 2}[self.family]
        if len(params) != want:
            raise ValueError(f"{self.family} noise takes {want} parameter(s), got {len(params)}")
        if any(not np.isfinite(p) or p <= 0 for p in params):
            raise ValueError(f"{self.family} parameters must be positive, got {params}")
        object.__setattr__(self, "params", params)

    @property
    def raw_mean(self) -> float:
        if self.family == "gaussian":
            return 0.0
        if self.family == "exponential":
            return 1.0 / self.params[0]
        a, b = self.params
        return a / (a + b)

    @property
    def shift(self) -> float:
        return -self.raw_mean if self.centering else 0.0

    @property
    def mean(self) -> float:
        return self.raw_mean + self.shift

    @property
    def variance(self) -> float:
        if self.family == "gaussian":
            return self.params[0] ** 2
        if self.family == "exponential":
            return 1.0 / self.params[0] ** 2
        a, b = self.params
        return a * b / ((a + b) ** 2 * (a + b + 1))

    def entropy(self) -> float:
        """Differential entropy in nats (shift invariant)."""
        if self.family == "gaussian":
            return 0.5 * np.log(2 * np.pi * np.e * self.params[0] ** 2)
        if self.family == "exponential":
            return 1.0 - np.log(self.params[0])
        return float(stats.beta(*self.params).entropy())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "gaussian":
            x = rng.normal(0.0, self.params[0], size=n)
        elif self.family == "exponential":
            x = rng.exponential(1.0 / self.params[0], size=n)
        else:
            x = rng.beta(*self.params, size=n)
        return x + self.shift

    def from_standard_normal(self, z: np.ndarray) -> np.ndarray:
        """Quantile transform ``F^{-1}(Phi(z))``: maps N(0, 1) draws to this law."""
        z = np.asarray(z, dtype=float)
        if self.family == "gaussian":
            return self.params[0] * z + self.shift
        if self.family == "exponential":
            # -log(1 - Phi(z)) = -log Phi(-z)
            return -special.log_ndtr(-z) / self.params[0] + self.shift
        return stats.beta(*self.params).ppf(special.ndtr(z)) + self.shift

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params), "centering": self.centering}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(d["family"], tuple(d["params"]), bool(d.get("centering", False)))


# ----------------------------------------------------- structural functions

class StructuralFunction:
    """``f_i`` evaluated on the parent matrix ``U`` of shape (n, |parents|)."""

    kind = "abstract"

    def __init__(self, parents: Sequence[int]):
        self.parents = tuple(int(p) for p in parents)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def on_tape(self, U: T.Tensor) -> T.Tensor:
        raise NotImplementedError

    def _check(self, U):
        if U.ndim != 2 or U.shape[1] != len(self.parents):
            raise ValueError(f"{self.kind} function expects {len(self.parents)} parent columns, "
                             f"got shape {U.shape}")

    def to_dict(self) -> dict:
        raise NotImplementedError


class ZeroFunction(StructuralFunction):
    kind = "zero"

    def __init__(self):
        super().__init__(())

    def __call__(self, U):
        return np.zeros(U.shape[0])

    def on_tape(self, U):
        return T.Tensor(np.zeros(U.shape[0]))

    def to_dict(self):
        return {"kind": self.kind, "parents": []}


class LinearFunction(StructuralFunction):
    kind = "linear"

    def __init__(self, parents, weights):
        super().__init__(parents)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != len(self.parents):
            raise ValueError("one weight per parent required")

    def __call__(self, U):
        U = np.asarray(U, dtype=float)
        self._check(U)
        return U @ self.weights

    def on_tape(self, U):
        return T.matmul(U, self.weights)

    def to_dict(self):
        return {"kind": self.kind, "parents": list(self.parents), "weights": self.weights.tolist()}


def rbf_kernel(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-0.5 * np.maximum(sq, 0.0))


class GPFunction(StructuralFunction):
    """A GP sample path pinned at anchor inputs.

    Off-anchor inputs evaluate to the noise-free posterior mean
    ``k(u, anchors) @ alpha``.
    """

    kind = "gp"

    def __init__(self, parents, anchors, values, jitter: float):
        super().__init__(parents)
        self.anchors = np.asarray(anchors, dtype=float)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        self.jitter = float(jitter)
        K = rbf_kernel(self.anchors, self.anchors) + self.jitter * np.eye(len(self.anchors))
        cho = np.linalg.cholesky(K)
        self.alpha = np.linalg.solve(cho.T, np.linalg.solve(cho, self.values))
        self._half_sq = 0.5 * (self.anchors ** 2).sum(1)

    def __call__(self, U):
        U = np.asarray(U, dtype=float)
        self._check(U)
        return rbf_kernel(U, self.anchors) @ self.alpha

    def on_tape(self, U):
        m = len(self.anchors)
        half_u = T.mul(T.tsum(T.square(U), axis=1), 0.5)
        cols = T.matmul(T.reshape(half_u, (U.shape[0], 1)), np.ones((1, m)))
        inner = T.add(T.matmul(U, self.anchors.T), -self._half_sq)
        return T.matmul(T.exp(T.sub(inner, cols)), self.alpha)

    def to_dict(self):
        return {"kind": self.kind, "parents": list(self.parents), "anchors": self.anchors.tolist(),
                "values": self.values.tolist(), "jitter": self.jitter}


class MLPFunction(StructuralFunction):
    """Sigmoid hidden layers, linear output."""

    kind = "mlp"

    def __init__(self, parents, params):
        super().__init__(parents)
        self.params = [np.asarray(p, dtype=float) for p in params]

    def __call__(self, U):
        U = np.asarray(U, dtype=float)
        self._check(U)
        return mlp_numpy(U, self.params, activation=special.expit)[:, 0]

    def on_tape(self, U):
        return T.getitem(mlp(U, self.params, activation=T.sigmoid), (slice(None), 0))

    def to_dict(self):
        return {"kind": self.kind, "parents": list(self.parents),
                "params": [{"shape": list(p.shape), "values": p.ravel().tolist()} for p in self.params]}


def function_from_dict(d: dict) -> StructuralFunction:
    kind = d["kind"]
    if kind == "zero":
        return ZeroFunction()
    if kind == "linear":
        return LinearFunction(d["parents"], d["weights"])
    if kind == "gp":
        return GPFunction(d["parents"], np.asarray(d["anchors"]).reshape(-1, len(d["parents"])),
                          d["values"], d["jitter"])
    if kind == "mlp":
        return MLPFunction(d["parents"], [np.asarray(e["values"]).reshape(e["shape"]) for e in d["params"]])
    raise ValueError(f"unknown function kind {kind!r}")


# ------------------------------------------------------------------- models

@dataclass(frozen=True, eq=False)
class StructuralModel:
    graph: DirectedAcyclicGraph
    functions: tuple
    noises: tuple

    def __post_init__(self):
        d = self.graph.d
        if len(self.functions) != d or len(self.noises) != d:
            raise StructuralError("need one function and one noise spec per node")
        for i, f in enumerate(self.functions):
            if tuple(f.parents) != tuple(self.graph.parents(i)):
                raise StructuralError(f"function of node {i} reads {f.parents}, "
                                      f"graph parents are {self.graph.parents(i)}")
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "noises", tuple(self.noises))
        object.__setattr__(self, "_topo", topological_order(self.graph))

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def order(self) -> Order:
        return self._topo

    def is_linear_gaussian(self) -> bool:
        return (all(isinstance(f, (LinearFunction, ZeroFunction)) for f in self.functions)
                and all(nz.family == "gaussian" for nz in self.noises))

    def weight_matrix(self) -> np.ndarray:
        """``W[j, i]`` = coefficient of ``V_j`` in ``f_i`` (linear models only)."""
        W = np.zeros((self.d, self.d))
        for i, f in enumerate(self.functions):
            if isinstance(f, LinearFunction):
                W[list(f.parents), i] = f.weights
            elif not isinstance(f, ZeroFunction):
                raise TypeError("weight_matrix needs a linear model")
        return W

    def covariance(self) -> np.ndarray:
        """Exact covariance of a linear model with finite-variance noises."""
        W = self.weight_matrix()
        B = np.linalg.inv(np.eye(self.d) - W.T)
        D = np.diag([nz.variance for nz in self.noises])
        return B @ D @ B.T

    def simulate(self, noise: np.ndarray, fixed: dict | None = None) -> np.ndarray:
        """Propagate a noise matrix (n, d) through the equations.

        ``fixed`` maps node -> value (scalar or per-row array) overriding that
        node's equation.
        """
        fixed = fixed or {}
        n = noise.shape[0]
        V = np.empty((n, self.d))
        for i in self.order:
            if i in fixed:
                V[:, i] = fixed[i]
                continue
            f = self.functions[i]
            base = f(V[:, list(f.parents)]) if f.parents else 0.0
            V[:, i] = base + noise[:, i]
        return V

    def draw_noise(self, n: int, seed) -> np.ndarray:
        eps = np.empty((n, self.d))
        for i, nz in enumerate(self.noises):
            eps[:, i] = nz.sample(rngmod.stream(seed, "noise", i), n)
        return eps


def sample_observational(m: StructuralModel, n: int, seed) -> np.ndarray:
    if int(n) < 1:
        raise ValueError("n must be at least 1")
    return m.simulate(m.draw_noise(int(n), seed))


# -------------------------------------------------------------------- tasks

@dataclass(frozen=True, eq=False)
class AufTask:
    roles: tuple
    alterable: tuple
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    region_M: np.ndarray
    region_d: np.ndarray

    def __post_init__(self):
        roles = tuple(self.roles)
        if any(r not in ROLES for r in roles):
            raise ValueError(f"roles must be among {ROLES}")
        alt = tuple(int(a) for a in self.alterable)
        if len(set(alt)) != len(alt):
            raise ValueError("alterable indices must be distinct")
        for a in alt:
            if not 0 <= a < len(roles) or roles[a] != "intermediate":
                raise ValueError(f"alterable node {a} is not an intermediate variable")
        lo = np.asarray(self.domain_lo, dtype=float).reshape(-1)
        hi = np.asarray(self.domain_hi, dtype=float).reshape(-1)
        if lo.shape != (len(alt),) or hi.shape != (len(alt),):
            raise ValueError("one domain interval per alterable variable required")
        if np.any(lo > hi):
            raise ValueError("decision domain intervals must be nonempty")
        n_out = sum(r == "outcome" for r in roles)
        M = np.asarray(self.region_M, dtype=float)
        # reshape(-1, 0) is ambiguous, so an outcome-free task keeps its row count explicitly
        M = M.reshape(-1, n_out) if n_out else M.reshape(M.shape[0] if M.ndim == 2 else 0, 0)
        dv = np.asarray(self.region_d, dtype=float).reshape(-1)
        if M.shape[0] != dv.shape[0]:
            raise ValueError("region matrix and vector disagree in row count")
        for name, val in [("roles", roles), ("alterable", alt), ("domain_lo", lo), ("domain_hi", hi),
                          ("region_M", M), ("region_d", dv)]:
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return len(self.roles)

    @property
    def context(self) -> tuple:
        return tuple(i for i, r in enumerate(self.roles) if r == "context")

    @property
    def outcome(self) -> tuple:
        return tuple(i for i, r in enumerate(self.roles) if r == "outcome")

    @property
    def intermediate(self) -> tuple:
        return tuple(i for i, r in enumerate(self.roles) if r == "intermediate")

    @property
    def domain_mid(self) -> np.ndarray:
        return 0.5 * (self.domain_lo + self.domain_hi)

    def validate_graph(self, g: DirectedAcyclicGraph) -> None:
        if g.d != self.d:
            raise StructuralError("task and graph disagree on node count")
        for a, b in g.edges:
            if self.roles[b] == "context" and self.roles[a] != "context":
                raise StructuralError(f"{self.roles[a]} node {a} is a parent of context node {b}")

    def check_decision(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float).reshape(-1)
        z = np.asarray(z, dtype=float).reshape(-1)
        if x.shape[0] != len(self.context):
            raise ValueError(f"context has {len(self.context)} variables, got {x.shape[0]} values")
        if z.shape[0] != len(self.alterable):
            raise ValueError(f"decision has {len(self.alterable)} variables, got {z.shape[0]} values")
        return x, z

    def in_region(self, Y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        Y = np.atleast_2d(Y)
        if self.region_M.shape[0] == 0:
            return np.ones(Y.shape[0], dtype=bool)
        return np.all(Y @ self.region_M.T <= self.region_d + tol, axis=1)

    def to_dict(self) -> dict:
        return {"roles": list(self.roles), "alterable": list(self.alterable),
                "domain_lo": self.domain_lo.tolist(), "domain_hi": self.domain_hi.tolist(),
                "region_M": self.region_M.tolist(), "region_d": self.region_d.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AufTask":
        return cls(tuple(d["roles"]), tuple(d["alterable"]), np.asarray(d["domain_lo"]),
                   np.asarray(d["domain_hi"]), np.asarray(d["region_M"]), np.asarray(d["region_d"]))


def box_region(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Encode ``lo <= y <= hi`` as ``M y <= d`` with stacked +/- identity rows."""
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    eye = np.eye(len(lo))
    return np.vstack([eye, -eye]), np.concatenate([hi, -lo])


def sample_interventional(m: StructuralModel, task: AufTask, x, z_A, n: int, seed) -> np.ndarray:
    """Simulate with context nodes set to ``x`` and alterable nodes set to ``z_A``."""
    if int(n) < 1:
        raise ValueError("n must be at least 1")
    x, z = task.check_decision(x, z_A)
    fixed = dict(zip(task.context, x))
    fixed.update(zip(task.alterable, z))
    return m.simulate(m.draw_noise(int(n), seed), fixed)


def true_success(m: StructuralModel, task: AufTask, x, z_A, n: int, seed) -> float:
    V = sample_interventional(m, task, x, z_A, n, seed)
    return float(task.in_region(V[:, list(task.outcome)]).mean())


def descendants_of_set(g: DirectedAcyclicGraph, nodes) -> set:
    out = set()
    for v in nodes:
        out |= descendants(g, v)
    return out


def ancestors_of_set(g: DirectedAcyclicGraph, nodes) -> set:
    out = set()
    for v in nodes:
        out |= ancestors(g, v)
    return out


# ------------------------------------------------------------ serialization

def model_to_dict(m: StructuralModel) -> dict:
    return {"d": m.d, "edges": [list(e) for e in m.graph.sorted_edges()],
            "functions": [f.to_dict() for f in m.functions],
            "noises": [nz.to_dict() for nz in m.noises]}


def model_from_dict(d: dict) -> StructuralModel:
    g = DirectedAcyclicGraph.from_edges(d["d"], d["edges"])
    return StructuralModel(g, tuple(function_from_dict(f) for f in d["functions"]),
                           tuple(NoiseSpec.from_dict(nz) for nz in d["noises"]))


def dump_json(path, model: StructuralModel, task: AufTask | None = None) -> None:
    doc = {"version": 1, "model": model_to_dict(model)}
    if task is not None:
        doc["task"] = task.to_dict()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_json(path) -> tuple[StructuralModel, AufTask | None]:
    with open(path) as fh:
        doc = json.load(fh)
    task = AufTask.from_dict(doc["task"]) if "task" in doc else None
    return model_from_dict(doc["model"]), task


@dataclass
class LinearGaussianSEM:
    """Convenience constructor for linear-Gaussian models from a weight matrix."""

    W: np.ndarray
    sigma: np.ndarray = field(default=None)

    def build(self) -> StructuralModel:
        W = np.asarray(self.W, dtype=float)
        d = W.shape[0]
        sigma = np.ones(d) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        g = DirectedAcyclicGraph.from_adjacency(W != 0)
        fns = []
        for i in range(d):
            pa = g.parents(i)
            fns.append(LinearFunction(pa, W[pa, i]) if pa else ZeroFunction())
        return StructuralModel(g, tuple(fns), tuple(NoiseSpec("gaussian", (s,)) for s in sigma))
