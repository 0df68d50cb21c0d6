"""Conditional normalizing flows per node and the order-composed joint sampler."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as rngmod
from .autodiff import AdamState, adam_step
from .autodiff import tensor as T
from .autodiff.nn import init_mlp, mlp, params_from_dict, params_to_dict
from .graph import Order
from .scm import AufTask, StructuralModel

CHECKPOINT_VERSION = 1
HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
A_OFFSET = np.log(np.e - 1.0)  # softplus(A_OFFSET) == 1
A_MIN = 1e-3
DELTA_BOUND = 0.3              # tail parameter lives in [e^-0.3, e^0.3]
VAL_SMOOTHING = 0.9


class FlowTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    blocks: int = 16
    width: int = 32
    depth: int = 2
    lr: float = 1e-3
    batch_size: int = 256
    train_fraction: float = 0.7
    val_fraction: float = 0.3
    patience: int = 20
    max_epochs: int = 500

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ValueError("train and validation fractions must sum to 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("validation fraction must lie in (0, 1)")
        if min(self.width, self.depth, self.batch_size, self.patience, self.max_epochs) < 1:
            raise ValueError("width, depth, batch size, patience and max_epochs must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _as_cond(C, n: int) -> np.ndarray:
    if C is None:
        return np.zeros((n, 0))
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C.reshape(n, -1) if C.size else np.zeros((n, 0))
    return C


class ConditionalFlow(BaseEstimator):
    """Monotone 1-D flow ``y = T(noise; cond)`` with ``noise ~ N(0, 1)``.

    Every block applies a conditional affine map with positive scale, then a
    sinh-arcsinh warp ``u -> sinh(delta * asinh(u) - eps)`` whose two shape
    parameters are learned per block. Data and conditioning are z-scored
    with training-split statistics.
    """

    def __init__(self, n_blocks=16, width=32, depth=2, lr=1e-3, batch_size=256,
                 val_fraction=0.3, patience=20, max_epochs=500, random_state=0):
        self.n_blocks = n_blocks
        self.width = width
        self.depth = depth
        self.lr = lr
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.patience = patience
        self.max_epochs = max_epochs
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg: TrainConfig, random_state=0) -> "ConditionalFlow":
        return cls(cfg.blocks, cfg.width, cfg.depth, cfg.lr, cfg.batch_size, cfg.val_fraction,
                   cfg.patience, cfg.max_epochs, random_state)

    # ------------------------------------------------------------ internals

    def _init_params(self, k: int, rng) -> list[np.ndarray]:
        K = self.n_blocks
        head = [np.zeros(K), np.zeros(K)]  # tail and skew per block
        if k == 0:
            return head + [np.zeros((1, 2 * K))]
        sizes = [k] + [self.width] * self.depth + [2 * K]
        # zero-initialized linear skip from conditioning to (scale, shift)
        return head + [np.zeros((k, 2 * K))] + init_mlp(sizes, rng, out_scale=0.01)

    def _conditioner(self, params, Cn) -> T.Tensor:
        if self.arity_ == 0:
            return T.matmul(np.ones((Cn.shape[0], 1)), params[2])
        return T.add(mlp(Cn, params[3:]), T.matmul(Cn, params[2]))

    def _blocks(self, params, Cn):
        K = self.n_blocks
        H = self._conditioner(params, Cn)
        delta = T.exp(T.mul(T.tanh(params[0]), DELTA_BOUND))
        for k in range(K):
            a = T.add(T.softplus(T.add(T.getitem(H, (slice(None), k)), A_OFFSET)), A_MIN)
            b = T.getitem(H, (slice(None), K + k))
            yield a, b, T.getitem(delta, k), T.getitem(params[1], k)

    def _forward_std(self, params, u, Cn) -> T.Tensor:
        for a, b, dk, ek in self._blocks(params, Cn):
            w = T.add(T.mul(a, u), b)
            u = T.sinh(T.sub(T.mul(dk, T.asinh(w)), ek))
        return u

    def _inverse_std(self, params, v, Cn):
        logdet = 0.0
        for a, b, dk, ek in reversed(list(self._blocks(params, Cn))):
            s = T.div(T.add(T.asinh(v), ek), dk)
            logdet = T.add(logdet, T.sub(T.sub(T.logcosh(s), T.log(dk)),
                                         T.mul(T.log1p(T.square(v)), 0.5)))
            u = T.div(T.sub(T.sinh(s), b), a)
            logdet = T.sub(logdet, T.log(a))
            v = u
        return v, logdet

    def _nll(self, params, yn, Cn) -> T.Tensor:
        u, logdet = self._inverse_std(params, yn, Cn)
        terms = T.sub(T.add(T.mul(T.square(u), 0.5), HALF_LOG_2PI), logdet)
        return T.add(T.mean(terms), float(np.log(self.y_scale_)))

    def _standardize(self, C) -> np.ndarray:
        return (C - self.cond_mean_) / self.cond_scale_

    def _train_once(self, Ctr, ytr, Cva, yva, rng):
        params = self._init_params(Ctr.shape[1], rng)
        opt = AdamState.for_params(params, lr=self.lr)
        best, best_params, wait, smooth = np.inf, [p.copy() for p in params], 0, np.inf
        train_curve, val_curve = [], []
        n = len(ytr)
        for epoch in range(self.max_epochs):
            perm = rng.permutation(n)
            losses = []
            for start in range(0, n, self.batch_size):
                idx = perm[start:start + self.batch_size]
                tp = [T.parameter(p) for p in params]
                loss = self._nll(tp, T.constant(ytr[idx]), T.constant(Ctr[idx]))
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                params = adam_step(opt, params, T.grad(loss, tp))
                losses.append(loss.item() * len(idx))
            val = self._nll(params, T.constant(yva), T.constant(Cva)).item()
            if not np.isfinite(val):
                raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
            train_curve.append(float(np.sum(losses) / n))
            val_curve.append(float(val))
            # stopping decisions use a smoothed curve; single epochs are noisy
            smooth = val if epoch == 0 else VAL_SMOOTHING * smooth + (1 - VAL_SMOOTHING) * val
            if smooth < best:
                best, best_params, wait = smooth, [p.copy() for p in params], 0
                self.best_epoch_ = epoch
            else:
                wait += 1
                if wait >= self.patience:
                    break
        return best_params, train_curve, val_curve

    # --------------------------------------------------------------- public

    def fit(self, C, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        n = len(y)
        if n < 50:
            raise ValueError(f"flow fitting needs at least 50 samples, got {n}")
        C = _as_cond(C, n)
        if C.shape[0] != n:
            raise ValueError("conditioning and target row counts differ")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(y))):
            raise ValueError("training data must be finite")
        self.arity_ = C.shape[1]
        split = rngmod.stream(self.random_state, "split").permutation(n)
        n_val = max(1, int(round(self.val_fraction * n)))
        va, tr = split[:n_val], split[n_val:]
        self.cond_mean_ = C[tr].mean(axis=0)
        sd = C[tr].std(axis=0)
        self.cond_scale_ = np.where(sd > 0, sd, 1.0)
        self.y_mean_ = float(y[tr].mean())
        ysd = float(y[tr].std())
        self.y_scale_ = ysd if ysd > 0 else 1.0
        Cn, yn = self._standardize(C), (y - self.y_mean_) / self.y_scale_
        last = None
        for attempt in range(2):
            rng = rngmod.stream(self.random_state, "train", attempt)
            try:
                params, tc, vc = self._train_once(Cn[tr], yn[tr], Cn[va], yn[va], rng)
            except FloatingPointError as exc:
                last = exc
                continue
            self.params_, self.train_curve_, self.val_curve_ = params, tc, vc
            self.restarts_ = attempt
            return self
        raise FlowTrainingError(f"training diverged twice: {last}")

    def _check_cond(self, cond, n: int):
        check_is_fitted(self, "params_")
        if isinstance(cond, T.Tensor):
            if self.arity_ == 0:
                return T.constant(np.zeros((n, 0)))
            if cond.ndim != 2 or cond.shape[1] != self.arity_:
                raise ValueError(f"flow expects {self.arity_} conditioning columns, got shape {cond.shape}")
            return T.div(T.sub(cond, self.cond_mean_), self.cond_scale_)
        C = _as_cond(cond, n)
        if C.shape != (n, self.arity_):
            raise ValueError(f"flow expects {self.arity_} conditioning columns, got shape {C.shape}")
        return T.constant(self._standardize(C))

    def forward_tape(self, noise, cond=None) -> T.Tensor:
        """Differentiable noise-to-value map; ``noise`` and ``cond`` may be tensors."""
        noise = T.as_tensor(noise)
        if noise.ndim != 1:
            raise ValueError("noise must be a vector")
        Cn = self._check_cond(cond, noise.shape[0])
        out = self._forward_std(self.params_, noise, Cn)
        return T.add(T.mul(out, self.y_scale_), self.y_mean_)

    def forward(self, noise, cond=None) -> np.ndarray:
        return self.forward_tape(np.asarray(noise, dtype=float).reshape(-1), cond).numpy()

    def inverse(self, y, cond=None) -> tuple[np.ndarray, np.ndarray]:
        """Noise and ``log |d noise / d y|`` for each value."""
        y = np.asarray(y, dtype=float).reshape(-1)
        Cn = self._check_cond(cond, len(y))
        u, logdet = self._inverse_std(self.params_, T.constant((y - self.y_mean_) / self.y_scale_), Cn)
        return u.numpy(), np.asarray(T.as_tensor(logdet).numpy()) - np.log(self.y_scale_)

    def log_prob(self, y, cond=None) -> np.ndarray:
        u, logdet = self.inverse(y, cond)
        return -0.5 * u ** 2 - HALF_LOG_2PI + logdet

    def score(self, C, y) -> float:
        """Mean log-likelihood."""
        return float(np.mean(self.log_prob(y, C)))

    def sample(self, cond=None, n: int | None = None, seed=0) -> np.ndarray:
        if n is None:
            n = _as_cond(cond, 1).shape[0] if cond is not None else 1
        z = rngmod.as_generator(seed).standard_normal(n)
        return self.forward(z, cond)

    def to_dict(self) -> dict:
        check_is_fitted(self, "params_")
        return {"hyper": self.get_params(), "arity": self.arity_,
                "cond_mean": self.cond_mean_.tolist(), "cond_scale": self.cond_scale_.tolist(),
                "y_mean": self.y_mean_, "y_scale": self.y_scale_,
                "weights": params_to_dict(self.params_),
                "train_curve": self.train_curve_, "val_curve": self.val_curve_}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalFlow":
        f = cls(**d["hyper"])
        f.arity_ = int(d["arity"])
        f.cond_mean_ = np.asarray(d["cond_mean"], dtype=float).reshape(f.arity_)
        f.cond_scale_ = np.asarray(d["cond_scale"], dtype=float).reshape(f.arity_)
        f.y_mean_, f.y_scale_ = float(d["y_mean"]), float(d["y_scale"])
        f.params_ = params_from_dict(d["weights"])
        f.train_curve_, f.val_curve_ = list(d["train_curve"]), list(d["val_curve"])
        return f


def fit_flow(data, order, i: int, cfg: TrainConfig = TrainConfig(), seed=0) -> ConditionalFlow:
    """Flow for node ``i`` conditioned on its predecessors in ``order``."""
    data = np.asarray(data, dtype=float)
    order = order if isinstance(order, Order) else Order(tuple(order))
    if not 0 <= i < len(order):
        raise ValueError(f"node {i} is not in the order")
    pred = order.predecessors(i)
    flow = ConditionalFlow.from_config(cfg, rngmod.derive_int(seed, "flow", i))
    return flow.fit(data[:, pred], data[:, i])


def _fit_job(args):
    return fit_flow(*args)


@dataclass(frozen=True, eq=False)
class FlowStack:
    order: Order
    flows: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, f in self.flows.items():
            if f.arity_ != len(self.order.predecessors(i)):
                raise ValueError(f"flow for node {i} has arity {f.arity_}, "
                                 f"order gives {len(self.order.predecessors(i))} predecessors")

    def to_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "order": list(self.order.perm), "meta": self.meta,
                "flows": {str(i): f.to_dict() for i, f in sorted(self.flows.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowStack":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        flows = {int(k): ConditionalFlow.from_dict(v) for k, v in d["flows"].items()}
        return cls(Order(tuple(d["order"])), flows, dict(d.get("meta", {})))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FlowStack":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_flow_stack(data, order, cfg: TrainConfig = TrainConfig(), seed=0, nodes=None,
                   jobs: int = 1) -> FlowStack:
    order = order if isinstance(order, Order) else Order(tuple(order))
    nodes = list(order.perm) if nodes is None else [int(v) for v in nodes]
    jobs_args = [(data, order, i, cfg, seed) for i in nodes]
    if jobs > 1 and len(nodes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flows = list(pool.map(_fit_job, jobs_args))
    else:
        flows = [_fit_job(a) for a in jobs_args]
    meta = {"config": cfg.to_dict(), "epochs": {str(i): len(f.val_curve_) for i, f in zip(nodes, flows)}}
    return FlowStack(order, dict(zip(nodes, flows)), meta)


# ---------------------------------------------------------------- sampling

class FlowConditional:
    """Node conditional backed by a trained flow."""

    def __init__(self, flow: ConditionalFlow, inputs):
        self.flow = flow
        self.inputs = tuple(inputs)

    def tape(self, noise: np.ndarray, cond):
        return self.flow.forward_tape(noise, cond)


class StructuralConditional:
    """Exact conditional ``f_i(pa) + F^{-1}(Phi(noise))`` of a known model."""

    def __init__(self, function, noise_spec):
        self.function = function
        self.noise_spec = noise_spec
        self.inputs = tuple(function.parents)

    def tape(self, noise: np.ndarray, cond):
        eps = self.noise_spec.from_standard_normal(noise)
        if not self.inputs:
            return T.constant(eps)
        return T.add(self.function.on_tape(cond), eps)


class JointSampler:
    """Post-decision sampler: walk the order, pin context and alterables, sample the rest.

    Standard-normal noise column ``i`` drives node ``i``. A decision matrix
    ``z`` of shape ``(R, |A|)`` runs ``R`` decisions side by side on a noise
    matrix with ``R * n`` rows (block ``r`` belongs to decision ``r``).
    """

    def __init__(self, order: Order, conditionals: dict, task: AufTask):
        self.order = order
        self.task = task
        self.conditionals = dict(conditionals)
        pinned = set(task.context) | set(task.alterable)
        for i in order:
            if i in pinned:
                continue
            if i not in self.conditionals:
                raise KeyError(f"no conditional model for node {i}")
            late = [j for j in self.conditionals[i].inputs if order.position(j) >= order.position(i)]
            if late:
                raise ValueError(f"node {i} reads {late}, which do not precede it in the order")
        self._pinned = pinned
        dep = set(task.alterable)
        for i in order:
            if i not in pinned and any(j in dep for j in self.conditionals[i].inputs):
                dep.add(i)
        self.dependent = frozenset(dep - set(task.alterable))
        need, stack = set(), list(task.outcome)
        while stack:
            v = stack.pop()
            if v in need:
                continue
            need.add(v)
            if v not in pinned:
                stack.extend(self.conditionals[v].inputs)
        self.needed_for_y = frozenset(need)

    @property
    def d(self) -> int:
        return self.task.d

    def _check(self, noise, z):
        noise = np.asarray(noise, dtype=float)
        if noise.ndim != 2 or noise.shape[1] != self.d:
            raise ValueError(f"noise must have {self.d} columns, got shape {noise.shape}")
        zt = T.as_tensor(z)
        if zt.ndim == 1:
            zt = T.reshape(zt, (1, zt.shape[0]))
        if zt.shape[1] != len(self.task.alterable):
            raise ValueError(f"decision has {len(self.task.alterable)} entries, got {zt.shape[1]}")
        if noise.shape[0] % zt.shape[0]:
            raise ValueError("noise rows must split evenly across decisions")
        return noise, zt

    def precompute(self, noise, x, nodes=None) -> dict:
        """Values of nodes that do not depend on the decision."""
        noise = np.asarray(noise, dtype=float)
        nodes = set(range(self.d)) if nodes is None else set(nodes)
        x = np.asarray(x, dtype=float).reshape(-1)
        vals: dict = {}
        rows = noise.shape[0]
        for j, c in enumerate(self.task.context):
            vals[c] = T.constant(np.full(rows, x[j]))
        out = {}
        for i in self.order:
            if i in self._pinned or i in self.dependent or i not in nodes:
                continue
            vals[i] = self._emit(i, noise, vals)
            out[i] = vals[i].numpy()
        return out

    def _emit(self, i, noise, vals):
        cond = self.conditionals[i]
        C = T.stack([vals[j] for j in cond.inputs], axis=1) if cond.inputs else None
        return cond.tape(noise[:, i], C)

    def run(self, noise, x, z, nodes=None, cache=None) -> dict:
        noise, zt = self._check(noise, z)
        x, _ = self.task.check_decision(x, np.zeros(len(self.task.alterable)))
        R = zt.shape[0]
        rows = noise.shape[0]
        n = rows // R
        rep = np.kron(np.eye(R), np.ones((n, 1)))
        vals: dict = {}
        for j, c in enumerate(self.task.context):
            vals[c] = T.constant(np.full(rows, x[j]))
        for k, a in enumerate(self.task.alterable):
            vals[a] = T.matmul(rep, T.getitem(zt, (slice(None), k)))
        nodes = set(range(self.d)) if nodes is None else set(nodes)
        for i in self.order:
            if i in vals or i not in nodes:
                continue
            if cache is not None and i in cache:
                vals[i] = T.constant(cache[i])
            else:
                vals[i] = self._emit(i, noise, vals)
        return vals

    def sample(self, noise, x, z) -> np.ndarray:
        vals = self.run(noise, x, z)
        return np.column_stack([vals[i].numpy() for i in range(self.d)])

    def sample_y_tape(self, noise, x, z, cache=None) -> T.Tensor:
        vals = self.run(noise, x, z, nodes=self.needed_for_y, cache=cache)
        return T.stack([vals[y] for y in self.task.outcome], axis=1)

    def sample_y(self, noise, x, z) -> np.ndarray:
        return self.sample_y_tape(noise, x, z).numpy()


def build_joint_sampler(stack: FlowStack, task: AufTask) -> JointSampler:
    conds = {i: FlowConditional(f, stack.order.predecessors(i)) for i, f in stack.flows.items()}
    return JointSampler(stack.order, conds, task)


def exact_sampler(model: StructuralModel, task: AufTask) -> JointSampler:
    """Sampler from the true structural conditionals (a reference double for flows)."""
    conds = {i: StructuralConditional(model.functions[i], model.noises[i]) for i in range(model.d)}
    return JointSampler(model.order, conds, task)


def sample_y(sampler: JointSampler, noise, x, z) -> np.ndarray:
    return sampler.sample_y(noise, x, z)
