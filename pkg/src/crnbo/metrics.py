"""Run-level performance metrics and their aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .loop import RunRecord
from .simulators import TEST_SEED_BASE


@dataclass(frozen=True)
class MetricSeries:
    metric: str
    iterations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "iterations", np.asarray(self.iterations, dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.iterations.shape != self.values.shape:
            raise InvalidInputError("iterations and values must align")


def evaluation_entries(record: RunRecord):
    return [e for e in record.entries if e.kind != "final"]


def opportunity_cost(target_fn, target_max: float, record: RunRecord) -> MetricSeries:
    """Gap between the best achievable target and the target at each
    iteration's recommendation; non-negative by construction."""
    iters = [e.n for e in record.entries]
    values = [target_max - target_fn(e.recommendation) for e in record.entries]
    return MetricSeries("opportunity_cost", np.array(iters), np.array(values))


def seed_reuse(record: RunRecord) -> MetricSeries:
    """Running fraction of post-init evaluations whose seed was already in
    the observed-seed history."""
    evals = evaluation_entries(record)
    if not evals:
        raise InvalidInputError("record has no post-init evaluations")
    flags = np.array([1.0 if e.reused else 0.0 for e in evals])
    running = np.cumsum(flags) / np.arange(1, len(flags) + 1)
    iters = np.array([e.n for e in evals])
    return MetricSeries("seed_reuse", iters, running)


def heldout_value(simulator, x, test_seed_count: int) -> tuple[float, float, bool]:
    """Mean objective at x over reserved test seeds, with its standard error.

    The test stream is disjoint from any training seed label.  With a single
    test seed the standard error is undefined and reported as 0 with a flag.
    """
    if test_seed_count < 1:
        raise InvalidInputError("need at least one test seed")
    values = np.array([
        simulator.evaluate(x, TEST_SEED_BASE + j) for j in range(1, test_seed_count + 1)
    ])
    mean = float(values.mean())
    if test_seed_count == 1:
        return mean, 0.0, False
    stderr = float(values.std(ddof=1) / np.sqrt(test_seed_count))
    return mean, stderr, True


def heldout_series(simulator, record: RunRecord, count: int, every: int) -> MetricSeries:
    """Held-out estimate of the recommendation quality on a sparse iteration
    schedule (always including the final recommendation)."""
    picks = []
    for e in record.entries:
        if e.kind == "final" or (e.n - record.n_init) % every == 0:
            picks.append(e)
    iters, values = [], []
    for e in picks:
        mean, _, _ = heldout_value(simulator, e.recommendation, count)
        iters.append(e.n)
        values.append(mean)
    return MetricSeries("heldout", np.array(iters), np.array(values))


def aggregate(series_list: list[MetricSeries]):
    """Mean and standard error across runs on a shared iteration axis."""
    if not series_list:
        raise InvalidInputError("nothing to aggregate")
    base = series_list[0].iterations
    for s in series_list[1:]:
        if not np.array_equal(s.iterations, base):
            raise InvalidInputError("metric series have mismatched iteration axes")
    stacked = np.vstack([s.values for s in series_list])
    mean = stacked.mean(axis=0)
    if stacked.shape[0] > 1:
        stderr = stacked.std(axis=0, ddof=1) / np.sqrt(stacked.shape[0])
    else:
        stderr = np.zeros_like(mean)
    return base, mean, stderr
