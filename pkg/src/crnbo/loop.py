"""Sequential optimization loop over a seeded objective.

One run: a space-filling design over the solution space crossed with five
initial seeds, then per-iteration model refits, a frozen inner
discretization, acquisition over (solution, seed) according to the policy
variant, and a per-iteration recommendation.  Budget accounting is exact:
pairs consume two evaluations and are only chosen when two remain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionEngine, AcquisitionSpace, build_discretization
from .acqopt import OptimizerConfig, optimize_kg_crn, select_pw_mode
from .designs import FiniteDomain, LatticeDomain
from .errors import InvalidInputError
from .gp import CrnHyperparams, Dataset, Posterior, fit_posterior
from .hyperfit import FitBounds, FitConfig, fit_hyperparams, refit_schedule, warm_refit
from .kernels import correlation_grad_x
from .optimize import ascend, coordinate_ascent_lattice
from .rng import stream

INIT_SEEDS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class PolicyVariant:
    """Model and acquisition switches of one algorithm variant."""

    name: str
    allow_offset: bool
    allow_bias: bool
    allow_old_seeds: bool
    allow_pairs: bool


POLICIES = {
    "KG": PolicyVariant("KG", False, False, False, False),
    "KG-PW": PolicyVariant("KG-PW", True, False, False, True),
    "KG-PW-bias": PolicyVariant("KG-PW-bias", True, True, False, True),
    "KG-CRN-CS": PolicyVariant("KG-CRN-CS", True, False, True, False),
    "KG-CRN": PolicyVariant("KG-CRN", True, True, True, False),
}


def policy(name: str) -> PolicyVariant:
    if name not in POLICIES:
        raise InvalidInputError(f"unknown policy {name!r}; known: {sorted(POLICIES)}")
    return POLICIES[name]


@dataclass(frozen=True)
class LoopConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    recommend_screen: int = 1000
    recommend_starts: int = 20
    recommend_steps: int = 50
    fixed_hyperparams: CrnHyperparams | None = None


@dataclass
class IterationEntry:
    n: int
    kind: str  # "single" | "pair-first" | "pair-second" | "final"
    x: np.ndarray | None
    seed: int | None
    acq_value: float
    fresh_acq_value: float
    y: float | None
    reused: bool | None
    recommendation: np.ndarray
    hyperparams: CrnHyperparams
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "n": self.n,
            "kind": self.kind,
            "x": None if self.x is None else [float(v) for v in self.x],
            "seed": self.seed,
            "acq_value": self.acq_value,
            "fresh_acq_value": self.fresh_acq_value,
            "y": self.y,
            "reused": self.reused,
            "recommendation": [float(v) for v in self.recommendation],
            "hyperparams": {
                "lengthscales": [float(v) for v in hp.lengthscales],
                "target_variance": hp.target_variance,
                "offset_variance": hp.offset_variance,
                "bias_variance": hp.bias_variance,
                "white_variance": hp.white_variance,
                "prior_mean": hp.prior_mean,
                "kernel": hp.kernel,
            },
        }


@dataclass
class RunRecord:
    policy: str
    budget: int
    n_init: int
    objective_sign: int
    init_x: np.ndarray
    init_s: np.ndarray
    init_y: np.ndarray
    entries: list[IterationEntry]
    incomplete: bool = False

    @property
    def final_recommendation(self) -> np.ndarray:
        return self.entries[-1].recommendation

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "budget": self.budget,
            "n_init": self.n_init,
            "objective_sign": self.objective_sign,
            "init_x": [[float(v) for v in row] for row in self.init_x],
            "init_s": [int(v) for v in self.init_s],
            "init_y": [float(v) for v in self.init_y],
            "incomplete": self.incomplete,
            "entries": [e.to_dict() for e in self.entries],
        }


def initialize(domain, n_init: int, rng: np.random.Generator, objective) -> Dataset:
    """Latin-hypercube design over the domain with seeds assigned round-robin
    over the five initial seeds."""
    if n_init < 5:
        raise InvalidInputError("n_init must be at least 5")
    if isinstance(domain, FiniteDomain):
        count = domain.points.shape[0]
        if count >= n_init:
            # One index per equal-width stratum of the enumerated set.
            edges = np.linspace(0, count, n_init + 1)
            idx = np.array([
                rng.integers(int(edges[k]), max(int(edges[k + 1]), int(edges[k]) + 1))
                for k in range(n_init)
            ])
            idx = np.minimum(idx, count - 1)
        else:
            idx = rng.integers(0, count, n_init)
        xs = domain.points[idx]
    elif isinstance(domain, LatticeDomain):
        xs = domain.lhc(rng, n_init)
    else:
        xs = domain.lhc(rng, n_init)
    data = Dataset.empty(domain.dim)
    for i in range(n_init):
        s = INIT_SEEDS[i % len(INIT_SEEDS)]
        data = data.add(xs[i], s, objective(xs[i], s))
    return data


def clamp_known_hyperparams(hp: CrnHyperparams, pol: PolicyVariant) -> CrnHyperparams:
    """Zero disallowed difference components, folding their mass into the
    white-noise term so the total difference variance is unchanged."""
    ov = hp.offset_variance if pol.allow_offset else 0.0
    bv = hp.bias_variance if pol.allow_bias else 0.0
    dropped = (hp.offset_variance - ov) + (hp.bias_variance - bv)
    return hp.with_(offset_variance=ov, bias_variance=bv, white_variance=hp.white_variance + dropped)


def recommend(post: Posterior, domain, rng: np.random.Generator, cfg: LoopConfig = LoopConfig()) -> np.ndarray:
    """Maximizer of the predicted target over the recommendation set; finite
    sets are searched exhaustively with lowest-index tie-break."""
    if isinstance(domain, FiniteDomain):
        vals = post.target_mean_batch(domain.points)
        return domain.points[int(np.argmax(vals))].copy()
    screen = domain.lhc(rng, cfg.recommend_screen)
    vals = post.target_mean_batch(screen)
    order = np.argsort(vals)[::-1][: cfg.recommend_starts]
    hp = post.hp

    def value_fn(x):
        return float(post.target_mean_batch([x])[0])

    def grad_fn(x):
        gc = correlation_grad_x(x, post.data.x, hp.lengthscales, hp.kernel)
        return hp.target_variance * (gc.T @ post.weights)

    best_x, best_v = screen[order[0]], float(vals[order[0]])
    for i in order:
        if isinstance(domain, LatticeDomain):
            x_loc, v = coordinate_ascent_lattice(
                lambda m: post.target_mean_batch(m), screen[i], domain, cfg.recommend_steps
            )
        else:
            x_loc, v, _ = ascend(
                value_fn, grad_fn, screen[i], domain.lower, domain.upper,
                max_steps=cfg.recommend_steps, initial_step=0.1 * float(np.max(domain.width)),
            )
        if v > best_v:
            best_x, best_v = x_loc, v
    return np.asarray(best_x, dtype=float).copy()


def _is_observed(data: Dataset, x: np.ndarray, s: int) -> bool:
    if len(data) == 0:
        return False
    return bool(np.any((data.s == s) & np.all(data.x == np.asarray(x, dtype=float).ravel(), axis=1)))


def run(
    pol: PolicyVariant | str,
    simulator,
    N: int,
    n_init: int,
    key: tuple,
    cfg: LoopConfig = LoopConfig(),
) -> RunRecord:
    """Execute one optimization run; returns the per-iteration record.

    ``key`` is a tuple of stream-key components; identical keys and configs
    reproduce the run exactly.
    """
    pol = policy(pol) if isinstance(pol, str) else pol
    if N <= n_init:
        raise InvalidInputError("budget must exceed the initial design size")
    domain = simulator.domain
    sign = 1 if simulator.goal == "max" else -1

    data = initialize(domain, n_init, stream(*key, "init"),
                      lambda x, s: sign * simulator.evaluate(x, s))
    record = RunRecord(
        policy=pol.name, budget=N, n_init=n_init, objective_sign=sign,
        init_x=data.x.copy(), init_s=data.s.copy(), init_y=sign * data.y.copy(),
        entries=[],
    )

    fixed_hp = None
    if cfg.fixed_hyperparams is not None:
        fixed_hp = clamp_known_hyperparams(cfg.fixed_hyperparams, pol)

    hp = fixed_hp

    def refit(n: int) -> CrnHyperparams:
        if fixed_hp is not None:
            return fixed_hp
        bounds = FitBounds.from_box(domain.lower, domain.upper, data.y)
        plan = refit_schedule(n, cfg.fit)
        if plan.kind == "full" or hp is None:
            return fit_hyperparams(data, bounds, stream(*key, "fit", n),
                                   pol.allow_offset, pol.allow_bias, cfg.fit)
        return warm_refit(data, hp, bounds, plan.warm_steps)

    while len(data) < N:
        n = len(data)
        t0 = time.perf_counter()
        hp = refit(n)
        post = fit_posterior(data, hp)
        disc = build_discretization(post, domain, stream(*key, "disc", n), iteration=n)
        engine = AcquisitionEngine(post, disc)
        space = AcquisitionSpace.from_posterior(post, domain)
        rec = recommend(post, domain, stream(*key, "rec", n), cfg)
        rng_acq = stream(*key, "acq", n)
        remaining = N - n

        picks: list[tuple[np.ndarray, int, str]] = []
        if pol.allow_pairs and remaining >= 2:
            dec = select_pw_mode(post, space, disc, rng_acq, cfg.optimizer, engine=engine)
            acq_value = dec.value_per_sample
            fresh_value = dec.single_value
            if dec.mode == "pair":
                x1, x2 = dec.pair
                picks = [(x1, dec.seed, "pair-first"), (x2, dec.seed, "pair-second")]
            elif dec.x_single is not None:
                picks = [(dec.x_single, dec.seed, "single")]
        else:
            res = optimize_kg_crn(post, space, disc, rng_acq, cfg.optimizer,
                                  allow_old_seeds=pol.allow_old_seeds, engine=engine)
            acq_value, fresh_value = res.value, res.fresh_value
            if not res.no_improvement and res.x is not None:
                picks = [(res.x, res.seed, "single")]
        picks = [(x, s, kind) for x, s, kind in picks if not _is_observed(data, x, s)]
        if not picks:
            # Nothing informative (or a degenerate duplicate): fall back to a
            # random solution on the fresh seed.
            x_rand = domain.sample(rng_acq, 1)[0]
            picks = [(x_rand, space.fresh_seed, "single")]
            acq_value = fresh_value = 0.0

        elapsed = time.perf_counter() - t0
        for x_next, s_next, kind in picks:
            try:
                y_raw = simulator.evaluate(x_next, s_next)
            except Exception:
                record.incomplete = True
                record.entries.append(IterationEntry(
                    n=len(data), kind=kind, x=np.asarray(x_next, dtype=float),
                    seed=int(s_next), acq_value=acq_value, fresh_acq_value=fresh_value,
                    y=None, reused=None, recommendation=rec, hyperparams=hp,
                    elapsed=elapsed,
                ))
                return record
            reused = int(s_next) in data.observed_seeds
            data = data.add(x_next, int(s_next), sign * y_raw)
            record.entries.append(IterationEntry(
                n=len(data) - 1, kind=kind, x=np.asarray(x_next, dtype=float),
                seed=int(s_next), acq_value=float(acq_value),
                fresh_acq_value=float(fresh_value), y=float(y_raw), reused=reused,
                recommendation=rec, hyperparams=hp, elapsed=elapsed,
            ))

    t0 = time.perf_counter()
    hp = refit(N)
    post = fit_posterior(data, hp)
    rec = recommend(post, domain, stream(*key, "rec", N), cfg)
    record.entries.append(IterationEntry(
        n=N, kind="final", x=None, seed=None, acq_value=0.0, fresh_acq_value=0.0,
        y=None, reused=None, recommendation=rec, hyperparams=hp,
        elapsed=time.perf_counter() - t0,
    ))
    return record
