"""Benchmark runners, Sachs ingestion and result serialization."""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .decide import OLEMRh, OptConfig, optimize_decision
from .flows import TrainConfig, exact_sampler
from .graph import DirectedAcyclicGraph, Order
from .metrics import div, shd, sid
from .olem import OLEM
from .scm import sample_observational, true_success
from .synth import AufBenchConfig, OrderBenchConfig, gen_auf_task, gen_order_task

CSV_HEADER = ("setting", "method", "metric", "mean", "std", "n_runs")
SACHS_SHAPE = (853, 11)


class ConfigError(ValueError):
    pass


class IngestError(ValueError):
    pass


# ------------------------------------------------------------------ tables

@dataclass(frozen=True)
class ResultRow:
    setting: str
    method: str
    metric: str
    mean: float
    std: float
    n_runs: int

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        if not self.std >= 0:
            raise ValueError("std must be non-negative")


def _sig6(v: float) -> float:
    return float(f"{v:.6g}")


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, setting: str, method: str, metric: str, values) -> ResultRow:
        vals = np.asarray(values, dtype=float).reshape(-1)
        if vals.size == 0:
            raise ValueError("no values to aggregate")
        row = ResultRow(setting, method, metric, float(vals.mean()), float(vals.std()), int(vals.size))
        self.rows.append(row)
        return row

    def __len__(self):
        return len(self.rows)

    def get(self, setting: str, method: str, metric: str) -> ResultRow:
        for r in self.rows:
            if (r.setting, r.method, r.metric) == (setting, method, metric):
                return r
        raise KeyError((setting, method, metric))

    def rounded(self) -> "ResultTable":
        return ResultTable([ResultRow(r.setting, r.method, r.metric, _sig6(r.mean), _sig6(r.std), r.n_runs)
                            for r in self.rows])

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    task_seeds: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    timestamps: dict | None = None

    def __post_init__(self):
        if not self.versions:
            import scipy
            import sklearn
            self.versions = {"rehearsal": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                             "scikit-learn": sklearn.__version__, "python": platform.python_version()}

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"command": self.command, "seed": self.seed, "config": self.config},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stamp(self, key: str) -> None:
        if self.timestamps is None:
            self.timestamps = {}
        self.timestamps[key] = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["config_hash"] = self.config_hash
        if out["timestamps"] is None:
            del out["timestamps"]
        return out


def emit_results(table: ResultTable, path, fmt: str = "csv", manifest: RunManifest | None = None) -> None:
    """Write a table as csv (manifest in a ``#`` header line) or json (sibling object)."""
    if len(table) == 0:
        raise ValueError("refusing to write an empty result table")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    man = manifest.to_dict() if manifest is not None else None
    if fmt == "csv":
        buf = io.StringIO()
        if man is not None:
            buf.write("# manifest: " + json.dumps(man, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow([r.setting, r.method, r.metric, f"{r.mean:.6g}", f"{r.std:.6g}", r.n_runs])
        text = buf.getvalue()
    else:
        recs = [{"setting": r.setting, "method": r.method, "metric": r.metric, "mean": _sig6(r.mean),
                 "std": _sig6(r.std), "n_runs": r.n_runs} for r in table.rows]
        text = json.dumps({"manifest": man, "results": recs}, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def read_results(path, fmt: str | None = None) -> tuple[ResultTable, dict | None]:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    text = path.read_text()
    if fmt == "json":
        blob = json.loads(text)
        rows = [ResultRow(r["setting"], r["method"], r["metric"], float(r["mean"]), float(r["std"]),
                          int(r["n_runs"])) for r in blob["results"]]
        return ResultTable(rows), blob.get("manifest")
    lines = text.splitlines()
    man = None
    if lines and lines[0].startswith("# manifest: "):
        man = json.loads(lines[0][len("# manifest: "):])
        lines = lines[1:]
    reader = csv.reader(lines)
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    rows = [ResultRow(s, m, k, float(a), float(b), int(c)) for s, m, k, a, b, c in reader]
    return ResultTable(rows), man


# ----------------------------------------------------------------- configs

def load_config(path) -> dict:
    """Parse a JSON config; syntax errors report line and column."""
    text = Path(path).read_text()
    try:
        blob = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(blob, dict):
        raise ConfigError(f"{path}:1:1: config must be a JSON object")
    return blob


def _build(cls, blob: dict, where: str):
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(blob) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**blob)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def order_cells(blob: dict) -> list[OrderBenchConfig]:
    """Expand list-valued ``d``, ``p``, ``r`` and ``noise`` into a grid of cells."""
    grid_keys = ("d", "p", "r", "noise")
    base = {k: v for k, v in blob.items() if k not in grid_keys}
    axes = [blob.get(k, getattr(OrderBenchConfig, k)) for k in grid_keys]
    axes = [a if isinstance(a, list) else [a] for a in axes]
    return [_build(OrderBenchConfig, {**base, **dict(zip(grid_keys, combo))}, "order config")
            for combo in itertools.product(*axes)]


def auf_settings(blob: dict) -> tuple[list[AufBenchConfig], TrainConfig, OptConfig]:
    train = _build(TrainConfig, blob.get("train", {}), "train config")
    opt = _build(OptConfig, blob.get("opt", {}), "opt config")
    rest = {k: v for k, v in blob.items() if k not in ("train", "opt", "settings")}
    if "settings" in blob:
        if rest:
            raise ConfigError(f"auf config: keys {sorted(rest)} conflict with 'settings'")
        settings = [_build(AufBenchConfig, s, f"setting {k}") for k, s in enumerate(blob["settings"])]
    else:
        settings = [_build(AufBenchConfig, rest, "auf config")]
    return settings, train, opt


def _pool_map(fn, jobs_args, jobs: int):
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, jobs_args))
    return [fn(a) for a in jobs_args]


# ----------------------------------------------------------- order bench

def order_instance(args) -> dict:
    """One model instance: learn, prune, score; plus a random-order DIV."""
    cfg, task_seed = args
    model = gen_order_task(cfg, task_seed)
    X = sample_observational(model, cfg.n, rngmod.stream(task_seed, "data"))
    est = OLEM().fit(X)
    rand = rngmod.stream(task_seed, "random-order").permutation(cfg.d)
    g = model.graph
    return {"DIV": div(est.order_, g), "SHD": shd(est.graph_, g), "SID": sid(est.graph_, g),
            "random_DIV": div(Order(tuple(int(v) for v in rand)), g), "edges": g.n_edges}


def run_order_bench(cells, seed: int = 0, jobs: int = 1):
    """Per cell: ``epochs * tasks`` instances, averaged within epochs, then mean/std over epochs."""
    cells = [cells] if isinstance(cells, OrderBenchConfig) else list(cells)
    table, seeds, jobs_args, index = ResultTable(), [], [], []
    for cfg in cells:
        for e in range(cfg.epochs):
            for t in range(cfg.tasks):
                s = rngmod.derive_int(seed, "order", cfg.cell_id, e, t)
                seeds.append({"cell": cfg.cell_id, "epoch": e, "task": t, "seed": s})
                jobs_args.append((cfg, s))
                index.append((cfg.cell_id, e))
    results = _pool_map(order_instance, jobs_args, jobs)
    for cfg in cells:
        per_epoch = {k: [] for k in ("DIV", "SHD", "SID", "random_DIV", "edges")}
        for e in range(cfg.epochs):
            rs = [r for r, key in zip(results, index) if key == (cfg.cell_id, e)]
            for k in per_epoch:
                per_epoch[k].append(np.mean([r[k] for r in rs]))
        for metric in ("DIV", "SHD", "SID"):
            table.add(cfg.cell_id, "OLEM", metric, per_epoch[metric])
        table.add(cfg.cell_id, "random-order", "DIV", per_epoch["random_DIV"])
        table.add(cfg.cell_id, "chance", "half_edges", np.asarray(per_epoch["edges"]) / 2)
    return table, seeds, results


# ------------------------------------------------------------- AUF bench

AUF_METHODS = ("OLEM-Rh", "no-op", "oracle")


def auf_task_run(args) -> dict:
    """All decision rounds of one task; returns per-method success lists."""
    cfg, task_seed, train_cfg, opt_cfg, methods = args
    model, task = gen_auf_task(cfg, task_seed)
    X = sample_observational(model, cfg.n, rngmod.stream(task_seed, "data"))
    contexts = sample_observational(model, cfg.rounds, rngmod.stream(task_seed, "contexts"))
    contexts = contexts[:, list(task.context)]
    noop = X[:, list(task.alterable)].mean(axis=0)
    rh = OLEMRh(train_config=train_cfg, opt_config=opt_cfg,
                random_state=rngmod.derive_int(task_seed, "olem-rh")).fit(X, task) if "OLEM-Rh" in methods else None
    oracle = exact_sampler(model, task) if "oracle" in methods else None
    out = {m: [] for m in methods}
    for r, x in enumerate(contexts):
        dseed = rngmod.derive_int(task_seed, "round", r)
        tseed = rngmod.derive_int(task_seed, "trial", r)
        for m in methods:
            if m == "OLEM-Rh":
                z = rh.decide(x, dseed).z_star
            elif m == "oracle":
                z = optimize_decision(oracle, task, x, opt_cfg, dseed).z_star
            elif m == "no-op":
                z = noop
            else:
                raise ValueError(f"unknown method {m!r}")
            out[m].append(true_success(model, task, x, z, cfg.trials, tseed))
    return out


def run_auf_bench(settings, seed: int = 0, jobs: int = 1, train_cfg: TrainConfig | None = None,
                  opt_cfg: OptConfig | None = None, methods=AUF_METHODS):
    """Mean/std over tasks of each method's per-task average true success."""
    settings = [settings] if isinstance(settings, AufBenchConfig) else list(settings)
    train_cfg, opt_cfg = train_cfg or TrainConfig(), opt_cfg or OptConfig()
    table, seeds, jobs_args, index = ResultTable(), [], [], []
    for cfg in settings:
        for t in range(cfg.tasks):
            s = rngmod.derive_int(seed, "auf", cfg.setting_id, t)
            seeds.append({"setting": cfg.setting_id, "task": t, "seed": s})
            jobs_args.append((cfg, s, train_cfg, opt_cfg, tuple(methods)))
            index.append(cfg.setting_id)
    results = _pool_map(auf_task_run, jobs_args, jobs)
    for cfg in settings:
        rs = [r for r, key in zip(results, index) if key == cfg.setting_id]
        for m in methods:
            table.add(cfg.setting_id, m, "success", [np.mean(r[m]) for r in rs])
    return table, seeds, results


# ------------------------------------------------------------------- Sachs

@dataclass(frozen=True, eq=False)
class SachsData:
    X: np.ndarray
    graph: DirectedAcyclicGraph
    columns: tuple

    @property
    def column_index(self) -> dict:
        return {c: i for i, c in enumerate(self.columns)}


def _default_path(name: str):
    return resources.files("rehearsal") / "data" / name


def ingest_sachs(path=None, truth=None) -> SachsData:
    path = Path(path) if path is not None else _default_path("sachs_cd3cd28.csv")
    truth = Path(truth) if truth is not None else _default_path("sachs_consensus_edges.csv")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: file is empty") from None
        if len(header) != SACHS_SHAPE[1] or len(set(header)) != len(header) or not all(header):
            raise IngestError(f"{path}:1: expected {SACHS_SHAPE[1]} distinct column names, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise IngestError(f"{path}:{lineno}: non-numeric cell in {row}") from None
            if not all(np.isfinite(vals)):
                raise IngestError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    X = np.array(rows, dtype=float).reshape(-1, len(header))
    if X.shape != SACHS_SHAPE:
        warnings.warn(f"expected a {SACHS_SHAPE[0]}x{SACHS_SHAPE[1]} matrix, got {X.shape}", stacklevel=2)
    idx = {c: i for i, c in enumerate(header)}
    edges = []
    with open(truth, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != ["cause", "effect"]:
            raise IngestError(f"{truth}:1: expected header 'cause,effect'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(f"{truth}:{lineno}: expected 2 fields, got {len(row)}")
            a, b = (v.strip() for v in row)
            missing = [v for v in (a, b) if v not in idx]
            if missing:
                raise IngestError(f"{truth}:{lineno}: unknown column(s) {missing}")
            edges.append((idx[a], idx[b]))
    try:
        g = DirectedAcyclicGraph.from_edges(len(header), edges)
    except ValueError as exc:
        raise IngestError(f"{truth}: {exc}") from None
    return SachsData(X, g, tuple(header))


def preprocess(X: np.ndarray, log_transform: bool) -> np.ndarray:
    if log_transform:
        if np.any(X <= 0):
            raise ValueError("log transform needs strictly positive data")
        return np.log(X)
    return X


def run_sachs_bench(runs: int = 10, seed: int = 0, log_transform: bool = True, standardize: bool = True,
                    path=None, truth=None, cutoff: float = 1e-3, data: SachsData | None = None):
    """Shuffle rows, learn and prune, score against the reference graph; per-run metrics."""
    if runs < 1:
        raise ValueError("runs must be positive")
    data = data or ingest_sachs(path, truth)
    Z = preprocess(data.X, log_transform)
    per_run, seeds = {"DIV": [], "SHD": [], "SID": []}, []
    for r in range(runs):
        s = rngmod.derive_int(seed, "sachs", r)
        seeds.append({"run": r, "seed": s})
        perm = rngmod.stream(s, "shuffle").permutation(Z.shape[0])
        est = OLEM(standardize=standardize, cutoff=cutoff).fit(Z[perm])
        per_run["DIV"].append(div(est.order_, data.graph))
        per_run["SHD"].append(shd(est.graph_, data.graph))
        per_run["SID"].append(sid(est.graph_, data.graph))
    table = ResultTable()
    for metric, vals in per_run.items():
        table.add("Sachs", "OLEM", metric, vals)
    return table, seeds, per_run
