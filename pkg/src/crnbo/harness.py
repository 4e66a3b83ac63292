"""Experiment runner: macroreplications, metric aggregation, result files.

Outputs are deterministic given the config and master seed: run records as
line-delimited JSON, metric curves as CSV with a fixed schema, and a summary
table with best-equivalence marking.  Timestamps live only in the metadata
sidecar so everything else is byte-reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .acqopt import OptimizerConfig
from .errors import InvalidInputError
from .hyperfit import FitConfig
from .loop import LoopConfig, RunRecord, run
from .metrics import MetricSeries, aggregate, heldout_series, opportunity_cost, seed_reuse
from .rng import stream
from .simulators import make_simulator

CSV_HEADER = "iteration,metric,mean,stderr,policy,benchmark"
WORKERS_ENV = "CRNBO_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    policies: tuple[str, ...]
    budget: int
    n_init: int
    macroreplications: int
    master_seed: int
    output_dir: str
    simulator_params: dict = field(default_factory=dict)
    rho_sweep: tuple[float, ...] | None = None
    known_hyperparams: bool = False
    heldout_count: int = 200
    heldout_every: int = 25
    fit: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    loop: dict = field(default_factory=dict)
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        if self.rho_sweep is not None:
            rhos = tuple(float(r) for r in self.rho_sweep)
            if any(not 0.0 <= r <= 1.0 for r in rhos):
                raise InvalidInputError("rho values must lie in [0, 1]")
            object.__setattr__(self, "rho_sweep", rhos)
        if self.budget <= 0 or self.n_init <= 0 or self.macroreplications <= 0:
            raise InvalidInputError("budgets and replication counts must be positive")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def canonical(self) -> str:
        payload = dataclasses.asdict(self)
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _loop_config(cfg: ExperimentConfig, simulator) -> LoopConfig:
    fit = FitConfig(**cfg.fit) if cfg.fit else FitConfig()
    opt = OptimizerConfig(**cfg.optimizer) if cfg.optimizer else OptimizerConfig()
    extra = dict(cfg.loop)
    fixed = simulator.known_hyperparams() if cfg.known_hyperparams else None
    return LoopConfig(fit=fit, optimizer=opt, fixed_hyperparams=fixed, **extra)


def _benchmark_label(cfg: ExperimentConfig, rho: float | None) -> str:
    if rho is None:
        return cfg.benchmark
    return f"{cfg.benchmark}[rho={rho:g}]"


def _make_task_simulator(cfg: ExperimentConfig, rho: float | None, rep: int):
    params = dict(cfg.simulator_params)
    if cfg.benchmark == "synthetic-gp":
        if rho is not None:
            params["rho"] = rho
        rho_idx = 0 if cfg.rho_sweep is None else cfg.rho_sweep.index(rho)
        params["master_seed"] = int(
            stream(cfg.master_seed, "sim", rho_idx, rep).integers(2**62)
        )
    return make_simulator(cfg.benchmark, params)


@dataclass
class TaskResult:
    label: str
    policy: str
    rep: int
    record: RunRecord
    series: list[MetricSeries]
    final_value: float
    failed: bool


def _execute_task(args) -> TaskResult:
    cfg, pol, rho, rep = args
    simulator = _make_task_simulator(cfg, rho, rep)
    loop_cfg = _loop_config(cfg, simulator)
    key = (cfg.master_seed, "run", pol, -1 if rho is None else cfg.rho_sweep.index(rho), rep)
    record = run(pol, simulator, cfg.budget, cfg.n_init, key, loop_cfg)
    series = []
    if record.incomplete:
        return TaskResult(_benchmark_label(cfg, rho), pol, rep, record, series, np.nan, True)
    series.append(seed_reuse(record))
    if cfg.benchmark == "synthetic-gp":
        truth_max = float(np.max(simulator.truth()))
        series.append(opportunity_cost(simulator.target_value, truth_max, record))
        final_value = float(series[-1].values[-1])
    else:
        series.append(heldout_series(simulator, record, cfg.heldout_count, cfg.heldout_every))
        final_value = float(series[-1].values[-1])
    return TaskResult(_benchmark_label(cfg, rho), pol, rep, record, series, final_value, False)


def _worker_count(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, cfg.workers or 1)


@dataclass
class ExperimentResult:
    results: list[TaskResult]
    failures: int
    output_dir: Path


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (policy, rho, replication) task and write result files."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()

    rhos = list(cfg.rho_sweep) if cfg.rho_sweep is not None else [None]
    tasks = [
        (cfg, pol, rho, rep)
        for rho in rhos
        for pol in cfg.policies
        for rep in range(cfg.macroreplications)
    ]
    workers = _worker_count(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_task, tasks))
    else:
        results = [_execute_task(t) for t in tasks]
    results.sort(key=lambda r: (r.label, r.policy, r.rep))

    _write_runs(out / "runs.jsonl", results)
    _write_curves(out / "curves.csv", results)
    _write_summary(out / "summary.csv", cfg, results)
    failures = sum(1 for r in results if r.failed)
    meta = {
        "config": json.loads(cfg.canonical()),
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "failures": failures,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return ExperimentResult(results=results, failures=failures, output_dir=out)


def _write_runs(path: Path, results: list[TaskResult]):
    with open(path, "w") as fh:
        for r in results:
            payload = {
                "benchmark": r.label,
                "policy": r.policy,
                "replication": r.rep,
                "record": r.record.to_dict(),
            }
            fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def _write_curves(path: Path, results: list[TaskResult]):
    groups: dict[tuple[str, str], list[TaskResult]] = {}
    for r in results:
        if not r.failed:
            groups.setdefault((r.label, r.policy), []).append(r)
    lines = [CSV_HEADER]
    for (label, pol), members in sorted(groups.items()):
        metrics = sorted({s.metric for m in members for s in m.series})
        for metric in metrics:
            per_run = [next(s for s in m.series if s.metric == metric) for m in members]
            iters, mean, stderr = aggregate(per_run)
            for i in range(iters.size):
                lines.append(
                    f"{int(iters[i])},{metric},{float(mean[i])!r},{float(stderr[i])!r},{pol},{label}"
                )
    path.write_text("\n".join(lines) + "\n")


def _goal_of(benchmark: str) -> str:
    if benchmark.startswith("ais") or "opportunity" in benchmark:
        return "min"
    return "max"


def _write_summary(path: Path, cfg: ExperimentConfig, results: list[TaskResult]):
    # Final-value summary per (benchmark, policy): mean, stderr, and whether
    # the +-2 stderr interval overlaps the best policy's interval.
    groups: dict[str, dict[str, list[float]]] = {}
    for r in results:
        if not r.failed:
            groups.setdefault(r.label, {}).setdefault(r.policy, []).append(r.final_value)
    # Lower is better for opportunity cost and for minimized simulators.
    minimize = cfg.benchmark == "synthetic-gp" or _goal_of(cfg.benchmark) == "min"
    lines = ["benchmark,policy,mean,stderr,best_equivalent"]
    for label in sorted(groups):
        stats = {}
        for pol, vals in groups[label].items():
            arr = np.asarray(vals)
            se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
            stats[pol] = (float(arr.mean()), se)
        means = {p: m for p, (m, _) in stats.items()}
        best_pol = min(means, key=means.get) if minimize else max(means, key=means.get)
        bm, bs = stats[best_pol]
        for pol in sorted(stats):
            m, s = stats[pol]
            overlap = (m - 2 * s) <= (bm + 2 * bs) and (bm - 2 * bs) <= (m + 2 * s)
            lines.append(f"{label},{pol},{m!r},{s!r},{int(overlap)}")
    path.write_text("\n".join(lines) + "\n")
