"""Experiment harness: NMSE of APS estimators versus the antenna count.

Each trial draws a true APS, simulates the covariance estimate from noisy
channel samples, builds the real observation system and runs every method
over its tuning grid.  The best grid point per method is chosen by NMSE
(oracle tuning), either per (method, M) on the mean over trials or per trial.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import aps
from .baselines import hybrid_model_data, nnls
from .gme import GmeConfig, solve_aps_problem

__all__ = [
    "SCHEMA_VERSION",
    "METHOD_KINDS",
    "ExperimentConfig",
    "MethodSpec",
    "ResultRow",
    "AggregateRow",
    "ResultsTable",
    "nmse",
    "load_config",
    "run_experiment",
    "aggregate_rows",
    "emit_results",
    "read_results",
    "resolve_threads",
]

SCHEMA_VERSION = 1
METHOD_KINDS = {
    "nnls": (),
    "hybrid": ("mu",),
    "proposed1": ("mu", "lam", "beta"),
    "proposed2": ("mu", "lam", "beta", "omega"),
}
ROW_COLUMNS = ["method", "M", "trial", "nmse", "status", "tuning"]
AGG_COLUMNS = ["method", "M", "mean_nmse", "std_err", "n_ok", "n_failed"]
PLOT_COLUMNS = ["M", "method", "mean_nmse", "std_err"]


@dataclass
class MethodSpec:
    name: str
    kind: str
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        need = METHOD_KINDS[self.kind]
        missing = [k for k in need if k not in self.grid]
        if missing:
            raise ValueError(f"method {self.name}: missing tuning grid for {missing}")
        extra = [k for k in self.grid if k not in need]
        if extra:
            raise ValueError(f"method {self.name}: unexpected grid keys {extra}")
        self.grid = {k: [float(v) for v in np.atleast_1d(self.grid[k])] for k in need}
        for k, vals in self.grid.items():
            if not vals:
                raise ValueError(f"method {self.name}: empty grid for {k}")

    def points(self):
        keys = METHOD_KINDS[self.kind]
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


@dataclass
class ExperimentConfig:
    """Experiment parameters; see ``configs/desk.yaml`` for the file schema."""

    N: int = 100
    M_list: list = field(default_factory=lambda: [4, 8, 16, 32])
    T: int = 1000
    snr_db: float = 30.0
    snr_normalizer: str = "M"
    trials: int = 50
    L: int = 1000
    grid_min: float = -math.pi / 2
    grid_max: float = math.pi / 2
    true_policy: str = "true"
    dataset_policy: str = "dataset"
    halpern_iters: int = 1000
    delta_ratio: float = 0.01
    methods: list = field(default_factory=list)
    tuning: str = "aggregate"
    solver_tol: float = 1e-6
    solver_max_iter: int = 20000
    master_seed: int = 0
    threads: int = 1
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        self.methods = [m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in self.methods]
        self.M_list = [int(m) for m in self.M_list]
        for name in ("N", "T", "L", "halpern_iters", "solver_max_iter", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.trials < 0:
            raise ValueError("trials must be nonnegative")
        if any(m < 1 for m in self.M_list):
            raise ValueError("antenna counts must be positive")
        if self.tuning not in ("aggregate", "per_trial"):
            raise ValueError("tuning must be 'aggregate' or 'per_trial'")
        if self.snr_normalizer not in ("M", "N"):
            raise ValueError("snr_normalizer must be 'M' or 'N'")
        if len({m.name for m in self.methods}) != len(self.methods):
            raise ValueError("method names must be unique")

    def grid(self):
        return np.linspace(self.grid_min, self.grid_max, self.N)

    def to_dict(self):
        d = asdict(self)
        d["methods"] = [asdict(m) for m in self.methods]
        return d


@dataclass
class ResultRow:
    method: str
    M: int
    trial: int
    nmse: float
    status: str = "ok"
    tuning: str = ""


@dataclass
class AggregateRow:
    method: str
    M: int
    mean_nmse: float
    std_err: float
    n_ok: int
    n_failed: int


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def mean(self, method, M):
        for a in self.aggregates:
            if a.method == method and a.M == M:
                return a.mean_nmse
        raise KeyError((method, M))


def nmse(x_star, x_hat):
    """``||x_star - x_hat||^2 / ||x_star||^2``."""
    x_star = np.asarray(x_star, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    den = float(x_star @ x_star)
    if den == 0.0:
        raise ValueError("x_star must be nonzero")
    d = x_star - x_hat
    return float(d @ d) / den


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if "schema_version" not in data:
        raise ValueError("config is missing schema_version")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


def resolve_threads(cli_value=None):
    env = os.environ.get("LOPBLOCK_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(cli_value)) if cli_value else 1


def _format_point(point):
    return ";".join(f"{k}={v!r}" for k, v in point.items())


def _parse_point(text):
    if not text:
        return {}
    return {k: float(v) for k, v in (item.split("=") for item in text.split(";"))}


def _dataset_stats(cfg):
    rng = np.random.default_rng([cfg.master_seed, 0xDA7A])
    grid = cfg.grid()
    X = np.array([aps.sample_aps(cfg.dataset_policy, rng, grid)[0] for _ in range(cfg.L)])
    return aps.dataset_stats(X, delta_ratio=cfg.delta_ratio)


def _simulate(cfg, M, trial):
    # same x* for every M of a trial: the stream depends only on the trial
    rng = np.random.default_rng(cfg.master_seed + trial)
    arr = aps.ArrayConfig(M=M, grid=cfg.grid())
    x_star, _ = aps.sample_aps(cfg.true_policy, rng, arr.grid)
    R = aps.true_covariance(x_star, arr)
    h = aps.sample_channels(R, cfg.T, 0.0, rng)
    dim = M if cfg.snr_normalizer == "M" else cfg.N
    s2 = aps.snr_noise_variance(h, cfg.snr_db, dim=dim)
    h = h + aps.complex_noise(h.shape, s2, rng)
    est = aps.estimate_covariance(h, s2, cfg.halpern_iters)
    obs = aps.extract_observation(est.R_hat, arr)
    return x_star, obs


def _run_method(spec, point, A, r, stats, cfg, warm):
    if spec.kind == "nnls":
        return nnls(A, r).x_hat
    mu = point["mu"]
    if spec.kind == "hybrid":
        return hybrid_model_data(A, r, stats.x_bar, stats.P, mu, tol=1e-10).x_hat
    if mu not in warm:
        warm[mu] = hybrid_model_data(A, r, stats.x_bar, stats.P, mu, tol=1e-10).x_hat
    g = GmeConfig(omega=point.get("omega", 0.0), lam=point["lam"], mu=mu,
                  beta=point["beta"], tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    x, _ = solve_aps_problem(A, r, stats.x_bar, stats.P, g, x0=warm[mu])
    return x


def _trial_task(args):
    cfg, M, trial, stats = args
    t0 = time.perf_counter()
    x_star, obs = _simulate(cfg, M, trial)
    out = {}
    warm = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for spec in cfg.methods:
            vals = []
            for point in spec.points():
                try:
                    x_hat = _run_method(spec, point, obs.A, obs.r_hat, stats, cfg, warm)
                    e = nmse(x_star, x_hat)
                    vals.append(e if math.isfinite(e) else math.nan)
                except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                    vals.append(math.nan)
            out[spec.name] = np.array(vals)
    return M, trial, out, time.perf_counter() - t0


def _init_worker():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def _select(cfg, grid_nmse):
    rows = []
    for spec in cfg.methods:
        pts = spec.points()
        for M in cfg.M_list:
            trials = sorted(t for (m, t) in grid_nmse if m == M)
            if not trials:
                continue
            mat = np.array([grid_nmse[(M, t)][spec.name] for t in trials])
            if cfg.tuning == "aggregate":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    means = np.nanmean(mat, axis=0)
                means = np.where(np.isnan(means), np.inf, means)
                choice = np.full(len(trials), int(np.argmin(means)))
            else:
                masked = np.where(np.isnan(mat), np.inf, mat)
                choice = np.argmin(masked, axis=1)
            for t, row, j in zip(trials, mat, choice):
                e = row[j]
                status = "ok" if math.isfinite(e) else "failed"
                rows.append(ResultRow(spec.name, M, t, float(e) if status == "ok" else math.nan,
                                      status, _format_point(pts[j])))
    return rows


def aggregate_rows(rows, methods, M_list):
    aggs = []
    for name in methods:
        for M in M_list:
            sel = [r for r in rows if r.method == name and r.M == M]
            if not sel:
                continue
            ok = np.array([r.nmse for r in sel if r.status == "ok"])
            n_fail = len(sel) - ok.size
            mean = float(ok.mean()) if ok.size else math.nan
            se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else 0.0
            aggs.append(AggregateRow(name, M, mean, se, int(ok.size), n_fail))
    return aggs


def run_experiment(cfg, threads=None, progress=None):
    """Run the full protocol and return a canonically ordered :class:`ResultsTable`."""
    table = ResultsTable()
    if cfg.trials == 0 or not cfg.methods or not cfg.M_list:
        return table
    stats = _dataset_stats(cfg)
    tasks = [(cfg, M, t, stats) for M in cfg.M_list for t in range(cfg.trials)]
    n_threads = threads or cfg.threads
    grid_nmse = {}
    timings = []
    if n_threads > 1:
        with ProcessPoolExecutor(max_workers=n_threads, initializer=_init_worker) as pool:
            for M, t, out, dt in pool.map(_trial_task, tasks, chunksize=1):
                grid_nmse[(M, t)] = out
                timings.append((M, t, dt))
                if progress:
                    progress(len(timings), len(tasks))
    else:
        for task in tasks:
            M, t, out, dt = _trial_task(task)
            grid_nmse[(M, t)] = out
            timings.append((M, t, dt))
            if progress:
                progress(len(timings), len(tasks))
    rows = _select(cfg, grid_nmse)
    rows.sort(key=lambda r: (r.method, r.M, r.trial))
    table.rows = rows
    table.aggregates = aggregate_rows(rows, sorted(m.name for m in cfg.methods), cfg.M_list)
    table.timings = sorted(timings)
    return table


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            w.writerow([_fmt(getattr(rec, c)) for c in columns])


def emit_results(table, out_dir, formats=("csv", "json")):
    """Write ``rows.csv``, ``aggregate.csv``, ``plot_data.csv``, ``timings.csv``
    and optionally ``results.json`` into ``out_dir``.

    Wall-clock times go to ``timings.csv`` only, so the row-level file is
    byte-identical across runs with the same config and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if "csv" in formats:
        paths["rows"] = out / "rows.csv"
        _write_csv(paths["rows"], ROW_COLUMNS, table.rows)
        paths["aggregate"] = out / "aggregate.csv"
        _write_csv(paths["aggregate"], AGG_COLUMNS, table.aggregates)
    paths["plot"] = out / "plot_data.csv"
    plot = sorted(table.aggregates, key=lambda a: (a.M, a.method))
    _write_csv(paths["plot"], PLOT_COLUMNS, plot)
    paths["timings"] = out / "timings.csv"
    with open(paths["timings"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "trial", "runtime_ms"])
        for M, t, dt in table.timings:
            w.writerow([M, t, f"{1e3 * dt:.3f}"])
    if "json" in formats:
        paths["json"] = out / "results.json"
        payload = {
            "schema_version": SCHEMA_VERSION,
            "rows": [asdict(r) for r in table.rows],
            "aggregates": [asdict(a) for a in table.aggregates],
        }
        with open(paths["json"], "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, allow_nan=True)
    return paths


def read_results(out_dir):
    """Parse ``rows.csv`` and ``aggregate.csv`` back into a :class:`ResultsTable`."""
    out = Path(out_dir)
    with open(out / "rows.csv", newline="", encoding="utf-8") as fh:
        rows = [ResultRow(d["method"], int(d["M"]), int(d["trial"]), float(d["nmse"]),
                          d["status"], d["tuning"]) for d in csv.DictReader(fh)]
    with open(out / "aggregate.csv", newline="", encoding="utf-8") as fh:
        aggs = [AggregateRow(d["method"], int(d["M"]), float(d["mean_nmse"]),
                             float(d["std_err"]), int(d["n_ok"]), int(d["n_failed"]))
                for d in csv.DictReader(fh)]
    return ResultsTable(rows, aggs)


def tuning_point(row):
    return _parse_point(row.tuning)
