"""Deterministic seeded benchmark objectives.

Every simulator output is a pure function of (solution, seed): all randomness
is drawn from counter-based streams keyed by the seed (plus a stream id), so
evaluating two solutions under the same seed couples them to the identical
exogenous realization (common random numbers), and repeated calls are
bit-identical.  Stateful generators never cross call boundaries.
"""

from __future__ import annotations

import heapq

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .designs import BoxDomain, FiniteDomain, LatticeDomain
from .errors import InvalidInputError
from .gp import CrnHyperparams
from .kernels import correlation
from .rng import stream

# Reserved stream base for held-out evaluation seeds; training seed labels
# stay far below this.
TEST_SEED_BASE = 1_000_000


def _chol_psd(mat: np.ndarray, scale: float) -> np.ndarray:
    """Cholesky factor with escalating jitter for sampled-surface matrices."""
    jitter = 1e-10 * scale
    eye = np.eye(mat.shape[0])
    for _ in range(12):
        try:
            return cholesky(mat + jitter * eye, lower=True)
        except LinAlgError:
            jitter *= 10.0
    raise LinAlgError("could not factor the sampling covariance")


# -- synthetic GP objective ---------------------------------------------------


@dataclass(frozen=True)
class SyntheticGpConfig:
    grid: np.ndarray
    target_variance: float = 100.0**2
    target_lengthscale: float = 5.0
    rho: float = 1.0
    total_difference_variance: float = 50.0**2
    difference_mode: str = "offsets"  # "offsets" | "bias"
    master_seed: int = 0

    def __post_init__(self):
        grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
        if grid.ndim == 2 and grid.shape[0] == 1 and grid.shape[1] > 1:
            grid = grid.T
        object.__setattr__(self, "grid", grid)
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidInputError("rho must lie in [0, 1]")
        if self.difference_mode not in ("offsets", "bias"):
            raise InvalidInputError("difference_mode must be 'offsets' or 'bias'")

    @classmethod
    def default_1d(cls, rho: float = 1.0, master_seed: int = 0, **kwargs) -> "SyntheticGpConfig":
        grid = np.arange(1, 101, dtype=float).reshape(-1, 1)
        return cls(grid=grid, rho=rho, master_seed=master_seed, **kwargs)


class SyntheticGP:
    """Finite-grid objective drawn once from a GP, plus per-seed differences.

    The target surface is an exact joint Gaussian draw over the grid keyed by
    the master seed.  Differences are either a per-seed constant offset or a
    per-seed smooth bias surface, plus white noise, with the split controlled
    by rho and the total held fixed.
    """

    name = "synthetic-gp"
    goal = "max"

    def __init__(self, cfg: SyntheticGpConfig):
        self.cfg = cfg
        self.domain = FiniteDomain(cfg.grid)
        m = cfg.grid.shape[0]
        ls = np.full(cfg.grid.shape[1], cfg.target_lengthscale)
        corr = correlation(cfg.grid, cfg.grid, ls)
        self._chol_target = _chol_psd(cfg.target_variance * corr, cfg.target_variance)
        z = stream(cfg.master_seed, "truth").standard_normal(m)
        self._truth = self._chol_target @ z
        self._structured_var = cfg.rho * cfg.total_difference_variance
        self._white_var = (1.0 - cfg.rho) * cfg.total_difference_variance
        if cfg.difference_mode == "bias" and self._structured_var > 0:
            self._chol_bias = _chol_psd(self._structured_var * corr, max(self._structured_var, 1e-12))
        else:
            self._chol_bias = None

    def truth(self) -> np.ndarray:
        return self._truth.copy()

    def target_value(self, x) -> float:
        idx = self.domain.index_of(x)
        if idx is None:
            raise InvalidInputError("solution is not on the grid")
        return float(self._truth[idx])

    def known_hyperparams(self) -> CrnHyperparams:
        cfg = self.cfg
        return CrnHyperparams(
            lengthscales=np.full(cfg.grid.shape[1], cfg.target_lengthscale),
            target_variance=cfg.target_variance,
            offset_variance=self._structured_var if cfg.difference_mode == "offsets" else 0.0,
            bias_variance=self._structured_var if cfg.difference_mode == "bias" else 0.0,
            white_variance=self._white_var,
            prior_mean=0.0,
        )

    def evaluate(self, x, s: int) -> float:
        cfg = self.cfg
        if s < 1:
            raise InvalidInputError("seeds must be >= 1")
        idx = self.domain.index_of(x)
        if idx is None:
            raise InvalidInputError("solution is not on the grid")
        value = self._truth[idx]
        if self._structured_var > 0:
            if cfg.difference_mode == "offsets":
                value += stream(cfg.master_seed, "offset", s).standard_normal() * np.sqrt(
                    self._structured_var
                )
            else:
                z = stream(cfg.master_seed, "bias", s).standard_normal(len(self._truth))
                value += (self._chol_bias @ z)[idx]
        if self._white_var > 0:
            value += stream(cfg.master_seed, "white", s, idx).standard_normal() * np.sqrt(
                self._white_var
            )
        return float(value)


def synthetic_gp_eval(cfg: SyntheticGpConfig, x, s: int) -> float:
    return SyntheticGP(cfg).evaluate(x, s)


def synthetic_gp_truth(cfg: SyntheticGpConfig) -> np.ndarray:
    return SyntheticGP(cfg).truth()


# -- assemble-to-order inventory simulator ------------------------------------

_DEFAULT_BOM = np.array(
    [
        [1, 0, 0, 1, 0, 1, 0, 0],
        [0, 1, 0, 1, 1, 0, 0, 0],
        [0, 0, 1, 0, 1, 0, 1, 0],
        [1, 1, 0, 0, 0, 0, 0, 1],
        [0, 0, 1, 1, 0, 1, 0, 1],
    ],
    dtype=int,
)

_DEFAULT_KEY = np.array(
    [
        [1, 0, 0, 1, 0, 0, 0, 0],
        [0, 1, 0, 1, 0, 0, 0, 0],
        [0, 0, 1, 0, 1, 0, 0, 0],
        [1, 1, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0, 0, 0],
    ],
    dtype=bool,
)


@dataclass(frozen=True)
class AtoConfig:
    """Shop replenishment problem: five products assembled from eight items.

    The internals (arrival rates, bill of materials, costs) are package
    defaults, configurable but not tied to any external implementation.
    """

    n_items: int = 8
    threshold_low: int = 1
    threshold_high: int = 20
    arrival_rates: np.ndarray = field(default_factory=lambda: np.ones(5))
    bom: np.ndarray = field(default_factory=lambda: _DEFAULT_BOM.copy())
    key_items: np.ndarray = field(default_factory=lambda: _DEFAULT_KEY.copy())
    item_profit: np.ndarray = field(default_factory=lambda: np.ones(8))
    holding_cost_rate: float = 0.02
    lead_time_mean: float = 0.5
    lead_time_sd: float = 0.1
    horizon: float = 70.0
    warmup: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "arrival_rates", np.asarray(self.arrival_rates, dtype=float))
        object.__setattr__(self, "bom", np.asarray(self.bom, dtype=int))
        object.__setattr__(self, "key_items", np.asarray(self.key_items, dtype=bool))
        object.__setattr__(self, "item_profit", np.asarray(self.item_profit, dtype=float))
        if self.bom.shape != self.key_items.shape:
            raise InvalidInputError("bill of materials and key flags must align")
        if self.bom.shape[1] != self.n_items:
            raise InvalidInputError("bill of materials must cover all items")


def ato_customer_stream(cfg: AtoConfig, s: int):
    """Arrival times and product choices for seed s; identical across all
    threshold settings evaluated under this seed."""
    rng = stream(s, "customers")
    total_rate = float(np.sum(cfg.arrival_rates))
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / total_rate)
        if t > cfg.horizon:
            break
        times.append(t)
    probs = cfg.arrival_rates / total_rate
    products = rng.choice(len(cfg.arrival_rates), size=len(times), p=probs)
    return np.asarray(times), products


class AssembleToOrder:
    """Discrete-event base-stock inventory simulation.

    Lead-time draws come from one dedicated stream per item, consumed in
    order of that item's replenishment orders, so the exogenous realization
    is shared across threshold settings under a common seed.
    """

    name = "ato"
    goal = "max"

    def __init__(self, cfg: AtoConfig = AtoConfig()):
        self.cfg = cfg
        self.domain = LatticeDomain(
            np.full(cfg.n_items, cfg.threshold_low),
            np.full(cfg.n_items, cfg.threshold_high),
        )

    def evaluate(self, thresholds, s: int) -> float:
        cfg = self.cfg
        x = np.asarray(thresholds, dtype=float).ravel()
        if x.shape[0] != cfg.n_items or np.any(x != np.round(x)):
            raise InvalidInputError("thresholds must be integers, one per item")
        if np.any(x < cfg.threshold_low) or np.any(x > cfg.threshold_high):
            raise InvalidInputError("thresholds out of range")
        if s < 1:
            raise InvalidInputError("seeds must be >= 1")
        n_items = cfg.n_items
        base = [int(v) for v in x]

        times, products = ato_customer_stream(cfg, s)
        lead_rngs = [stream(s, "lead", i) for i in range(n_items)]
        need_rows = [[int(v) for v in row] for row in cfg.bom]
        key_idx = [[i for i in range(n_items) if cfg.key_items[p, i]] for p in range(cfg.bom.shape[0])]
        profit = [float(v) for v in cfg.item_profit]
        rate = cfg.holding_cost_rate

        on_hand = [float(b) for b in base]
        total_oh = float(sum(base))
        position = list(on_hand)
        pending: list[tuple[float, int, int, float]] = []  # (arrival, order#, item, qty)
        order_no = 0
        revenue = 0.0
        holding = 0.0
        t_prev = cfg.warmup

        def advance(t_to: float):
            nonlocal holding, t_prev
            if t_to > t_prev:
                holding += rate * total_oh * (t_to - t_prev)
                t_prev = t_to

        for k in range(len(times)):
            t_now = float(times[k])
            product = int(products[k])
            while pending and pending[0][0] <= t_now:
                t_arr, _, item, qty = heapq.heappop(pending)
                advance(t_arr)
                on_hand[item] += qty
                total_oh += qty
            advance(t_now)

            need = need_rows[product]
            if all(on_hand[i] >= need[i] for i in key_idx[product]):
                sale = 0.0
                for i in range(n_items):
                    take = need[i] if need[i] <= on_hand[i] else on_hand[i]
                    if i in key_idx[product]:
                        take = need[i]
                    if take > 0.0:
                        on_hand[i] -= take
                        total_oh -= take
                        position[i] -= take
                        sale += take * profit[i]
                        short = base[i] - position[i]
                        if short > 0.0:
                            lead = lead_rngs[i].normal(cfg.lead_time_mean, cfg.lead_time_sd)
                            if lead < 0.0:
                                lead = 0.0
                            order_no += 1
                            heapq.heappush(pending, (t_now + lead, order_no, i, short))
                            position[i] += short
                if t_now >= cfg.warmup:
                    revenue += sale

        while pending and pending[0][0] <= cfg.horizon:
            t_arr, _, item, qty = heapq.heappop(pending)
            advance(t_arr)
            on_hand[item] += qty
            total_oh += qty
        advance(cfg.horizon)
        return revenue - holding


def ato_eval(cfg: AtoConfig, thresholds, s: int) -> float:
    return AssembleToOrder(cfg).evaluate(thresholds, s)


# -- ambulances in a square ----------------------------------------------------


@dataclass(frozen=True)
class AisConfig:
    side: float = 30.0
    num_bases: int = 3
    horizon: float = 1800.0
    expected_patients: float = 30.0
    speed: float = 1.0
    objective: str = "mean"  # "mean" | "sum" | "fixed30"

    def __post_init__(self):
        if self.objective not in ("mean", "sum", "fixed30"):
            raise InvalidInputError("objective must be 'mean', 'sum' or 'fixed30'")


def ais_patient_stream(cfg: AisConfig, s: int):
    """Patient times and locations for seed s (Poisson over the horizon, or
    exactly the expected count in fixed mode)."""
    rng = stream(s, "patients")
    if cfg.objective == "fixed30":
        count = int(round(cfg.expected_patients))
    else:
        count = int(rng.poisson(cfg.expected_patients))
    times = np.sort(rng.random(count)) * cfg.horizon
    locations = rng.random((count, 2)) * cfg.side
    return times, locations


class AmbulancesInSquare:
    """Travel-time objective: each patient is served from the nearest base at
    constant speed, one-way, no queueing.  Lower is better."""

    name = "ais"
    goal = "min"

    def __init__(self, cfg: AisConfig = AisConfig()):
        self.cfg = cfg
        d = 2 * cfg.num_bases
        self.domain = BoxDomain(np.zeros(d), np.full(d, cfg.side))

    def evaluate(self, bases, s: int) -> float:
        cfg = self.cfg
        x = np.asarray(bases, dtype=float).ravel()
        if x.shape[0] != 2 * cfg.num_bases:
            raise InvalidInputError("solution must hold (x, y) per base")
        if np.any(x < 0.0) or np.any(x > cfg.side):
            raise InvalidInputError("base locations out of the square")
        if s < 1:
            raise InvalidInputError("seeds must be >= 1")
        locations = x.reshape(cfg.num_bases, 2)
        _, patients = ais_patient_stream(cfg, s)
        if patients.shape[0] == 0:
            return 0.0
        dists = np.linalg.norm(patients[:, None, :] - locations[None, :, :], axis=2)
        journey = dists.min(axis=1) / cfg.speed
        if cfg.objective == "sum":
            return float(np.sum(journey))
        return float(np.mean(journey))


def ais_eval(cfg: AisConfig, bases, s: int) -> float:
    return AmbulancesInSquare(cfg).evaluate(bases, s)


# -- registry ------------------------------------------------------------------


def _make_synthetic(params: dict) -> SyntheticGP:
    params = dict(params)
    if "grid" in params:
        params["grid"] = np.asarray(params["grid"], dtype=float)
        return SyntheticGP(SyntheticGpConfig(**params))
    return SyntheticGP(SyntheticGpConfig.default_1d(**params))


def _make_ato(params: dict) -> AssembleToOrder:
    params = dict(params)
    for key in ("arrival_rates", "bom", "key_items", "item_profit"):
        if key in params:
            params[key] = np.asarray(params[key])
    return AssembleToOrder(AtoConfig(**params)) if params else AssembleToOrder()


def _make_ais(params: dict) -> AmbulancesInSquare:
    return AmbulancesInSquare(AisConfig(**params)) if params else AmbulancesInSquare()


REGISTRY = {
    "synthetic-gp": _make_synthetic,
    "ato": _make_ato,
    "ais": _make_ais,
}


def make_simulator(name: str, params: dict | None = None):
    if name not in REGISTRY:
        raise InvalidInputError(f"unknown benchmark {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](params or {})
