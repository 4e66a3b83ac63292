"""Maximum marginal-likelihood estimation of the surrogate hyperparameters.

Fitting runs in three stages: an independent-noise fit over lengthscales,
signal variance and white noise (offset and bias clamped to zero); a
constrained split of the fitted noise budget into offset, bias and white
components over the unit square; and a joint fine-tune of everything by
gradient ascent on log-parameters.  Accepted steps only ever improve the
likelihood, so each stage is guaranteed not to fall below the previous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .errors import FittingError, InvalidInputError
from .gp import CrnHyperparams, Dataset, _factor_with_jitter, kernel_matrix
from .kernels import correlation_dr2, correlation_from_sqdist
from .optimize import ascend

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FitBounds:
    """Search box for the likelihood surface, derived from the data."""

    lengthscale_lower: np.ndarray
    lengthscale_upper: np.ndarray
    variance_lower: float
    variance_upper: float
    box_width: np.ndarray

    @classmethod
    def from_box(cls, lower, upper, y) -> "FitBounds":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        width = upper - lower
        if np.any(width <= 0):
            raise InvalidInputError("domain bounds must satisfy lower < upper")
        y = np.asarray(y, dtype=float)
        spread = float(y.max() - y.min()) if y.size else 0.0
        var_upper = 1.5 * spread**2 if spread > 0 else 1.0
        return cls(
            lengthscale_lower=1e-3 * width,
            lengthscale_upper=2.0 * width,
            variance_lower=1e-6 * var_upper,
            variance_upper=var_upper,
            box_width=width,
        )


@dataclass(frozen=True)
class SplitParams:
    """Reparameterized difference-variance split on the unit square.

    The reconstruction keeps offset + bias + white equal to the
    independent-model noise exactly.
    """

    alpha: float
    beta: float

    def variances(self, total: float) -> tuple[float, float, float]:
        offset = self.beta * (1.0 - self.alpha) * total
        bias = (1.0 - self.beta) * (1.0 - self.alpha) * total
        white = self.alpha * total
        return offset, bias, white


@dataclass(frozen=True)
class FitPlan:
    kind: str  # "full" | "warm"
    warm_steps: int = 20


@dataclass(frozen=True)
class FitConfig:
    n_screen: int = 1000
    n_refine: int = 20
    refine_steps: int = 100
    stage2_max_evals: int = 200
    stage3_steps: int = 100
    warm_steps: int = 20
    full_until: int = 100
    full_interval: int = 10
    small_n: int = 5


def refit_schedule(iteration: int, cfg: FitConfig = FitConfig()) -> FitPlan:
    """Full three-stage search early and periodically; cheap warm-started
    ascent otherwise."""
    if iteration < 0:
        raise InvalidInputError("iteration must be >= 0")
    if iteration <= cfg.full_until or iteration % cfg.full_interval == 0:
        return FitPlan(kind="full")
    return FitPlan(kind="warm", warm_steps=cfg.warm_steps)


def log_marginal_likelihood(data: Dataset, hp: CrnHyperparams) -> float:
    """Exact log marginal likelihood of the centered outputs (nats)."""
    if len(data) == 0:
        raise InvalidInputError("log_marginal_likelihood requires data")
    K = kernel_matrix(data.x, data.s, data.x, data.s, hp)
    L, _ = _factor_with_jitter(K, hp)
    delta = data.y - hp.prior_mean
    alpha = cho_solve((L, True), delta)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (delta @ alpha + logdet + len(data) * LOG_2PI))


# Parameter-vector layout used by the gradient-based stages: lengthscales
# first, then any of the variance components that are free to move.
_VAR_FIELDS = ("target_variance", "offset_variance", "bias_variance", "white_variance")


def _free_names(hp: CrnHyperparams, include_ls: bool = True) -> list[str]:
    names = [f"l{k}" for k in range(hp.dim)] if include_ls else []
    names += [f for f in _VAR_FIELDS if getattr(hp, f) > 0.0]
    return names


def _hp_from_logvec(vec, names, base: CrnHyperparams) -> CrnHyperparams:
    values = dict(zip(names, np.exp(np.asarray(vec, dtype=float))))
    ls = base.lengthscales.copy()
    for k in range(base.dim):
        key = f"l{k}"
        if key in values:
            ls[k] = values.pop(key)
    return base.with_(lengthscales=ls, **values)


def _logvec_from_hp(hp: CrnHyperparams, names) -> np.ndarray:
    out = []
    for name in names:
        if name.startswith("l"):
            out.append(hp.lengthscales[int(name[1:])])
        else:
            out.append(getattr(hp, name))
    return np.log(np.asarray(out, dtype=float))


def log_ml_and_grad(data: Dataset, hp: CrnHyperparams, names) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient w.r.t. the named
    log-parameters."""
    x, s, n = data.x, data.s, len(data)
    ls = hp.lengthscales
    diff = x[:, None, :] - x[None, :, :]
    sq = (diff / ls) ** 2  # (n, n, d)
    r2 = sq.sum(axis=2)
    corr = correlation_from_sqdist(r2, hp.kernel)
    same_seed = s[:, None] == s[None, :]
    K = hp.target_variance * corr + same_seed * (
        hp.offset_variance + hp.bias_variance * corr
    )
    if hp.white_variance > 0:
        same_x = np.all(diff == 0.0, axis=2)
        K = K + hp.white_variance * (same_seed & same_x)
    L, jitter = _factor_with_jitter(K, hp)
    delta = data.y - hp.prior_mean
    alpha = cho_solve((L, True), delta)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    value = float(-0.5 * (delta @ alpha + logdet + n * LOG_2PI))

    Kinv = cho_solve((L, True), np.eye(n))
    dcorr = None
    grad = np.empty(len(names))
    for i, name in enumerate(names):
        if name == "target_variance":
            # The diagonal jitter scales with the target variance.
            G = hp.target_variance * corr + jitter * np.eye(n)
        elif name == "offset_variance":
            G = hp.offset_variance * same_seed.astype(float)
        elif name == "bias_variance":
            G = hp.bias_variance * (same_seed * corr)
        elif name == "white_variance":
            same_x = np.all(diff == 0.0, axis=2)
            G = hp.white_variance * (same_seed & same_x).astype(float)
        else:
            k = int(name[1:])
            if dcorr is None:
                dcorr = correlation_dr2(r2, hp.kernel)
            amp = hp.target_variance + hp.bias_variance * same_seed
            G = amp * dcorr * (-2.0 * sq[:, :, k])
        grad[i] = 0.5 * (alpha @ (G @ alpha) - np.sum(Kinv * G))
    return value, grad


def _ascend_logml(data, hp0, names, bounds: FitBounds, steps: int):
    """Gradient ascent on the named log-parameters; returns (hp, logml)."""
    if not names:
        return hp0, log_marginal_likelihood(data, hp0)
    x0 = _logvec_from_hp(hp0, names)
    lo, hi = [], []
    for name, val in zip(names, x0):
        if name.startswith("l"):
            k = int(name[1:])
            lo.append(np.log(bounds.lengthscale_lower[k]))
            hi.append(np.log(bounds.lengthscale_upper[k]))
        else:
            lo.append(np.log(bounds.variance_lower))
            hi.append(np.log(bounds.variance_upper))
    # Never let the bounds exclude the starting point.
    lo = np.minimum(np.asarray(lo), x0)
    hi = np.maximum(np.asarray(hi), x0)

    def value_fn(vec):
        try:
            return log_marginal_likelihood(data, _hp_from_logvec(vec, names, hp0))
        except (FloatingPointError, ValueError):
            return -np.inf

    def grad_fn(vec):
        return log_ml_and_grad(data, _hp_from_logvec(vec, names, hp0), names)[1]

    best_vec, best_val, _ = ascend(
        value_fn, grad_fn, x0, lo, hi, max_steps=steps, initial_step=0.5
    )
    return _hp_from_logvec(best_vec, names, hp0), best_val


def small_n_defaults(data: Dataset, bounds: FitBounds) -> CrnHyperparams:
    """Fallback hyperparameters when the dataset is too small for MLE."""
    y = data.y
    tv = float(np.var(y)) if len(y) >= 2 else 1.0
    if tv <= 0:
        tv = 1.0
    return CrnHyperparams(
        lengthscales=0.2 * bounds.box_width,
        target_variance=tv,
        offset_variance=0.0,
        bias_variance=0.0,
        white_variance=0.1 * tv,
        prior_mean=float(np.mean(y)) if len(y) else 0.0,
    )


def fit_stage1_independent(
    data: Dataset,
    bounds: FitBounds,
    rng: np.random.Generator,
    cfg: FitConfig = FitConfig(),
) -> CrnHyperparams:
    """Independent-noise fit: screen uniform candidates, refine the best by
    gradient ascent over (log lengthscales, log signal, log white noise)."""
    if len(data) < cfg.small_n:
        return small_n_defaults(data, bounds)
    mean_y = float(np.mean(data.y))
    d = data.dim
    names = [f"l{k}" for k in range(d)] + ["target_variance", "white_variance"]

    lows = np.concatenate([bounds.lengthscale_lower, [bounds.variance_lower] * 2])
    highs = np.concatenate([bounds.lengthscale_upper, [bounds.variance_upper] * 2])
    cand = lows + rng.random((cfg.n_screen, d + 2)) * (highs - lows)

    def hp_of(row) -> CrnHyperparams:
        return CrnHyperparams(
            lengthscales=row[:d],
            target_variance=row[d],
            white_variance=row[d + 1],
            prior_mean=mean_y,
        )

    scores = np.full(cfg.n_screen, -np.inf)
    for i in range(cfg.n_screen):
        try:
            scores[i] = log_marginal_likelihood(data, hp_of(cand[i]))
        except (FloatingPointError, ValueError):
            pass
    if not np.any(np.isfinite(scores)):
        raise FittingError("no screening candidate produced a finite likelihood")

    order = np.argsort(scores)[::-1][: cfg.n_refine]
    best_hp, best_val = None, -np.inf
    for i in order:
        if not np.isfinite(scores[i]):
            continue
        hp, val = _ascend_logml(data, hp_of(cand[i]), names, bounds, cfg.refine_steps)
        if val > best_val:
            best_hp, best_val = hp, val
    if best_hp is None:
        raise FittingError("gradient refinement failed on all candidates")
    return best_hp


def fit_stage2_split(
    data: Dataset,
    stage1: CrnHyperparams,
    cfg: FitConfig = FitConfig(),
    allow_offset: bool = True,
    allow_bias: bool = True,
) -> CrnHyperparams:
    """Split the independent-model noise into offset/bias/white parts over the
    unit square by Nelder-Mead, holding lengthscales, signal variance and the
    total noise fixed."""
    total = stage1.white_variance
    if total <= 0 or (not allow_offset and not allow_bias):
        return stage1

    def hp_of(alpha: float, beta: float) -> CrnHyperparams:
        ov, bv, wv = SplitParams(alpha, beta).variances(total)
        return stage1.with_(offset_variance=ov, bias_variance=bv, white_variance=wv)

    def objective(z) -> float:
        alpha, beta = _unpack(z)
        try:
            return -log_marginal_likelihood(data, hp_of(alpha, beta))
        except (FloatingPointError, ValueError):
            return np.inf

    if allow_offset and allow_bias:
        _unpack = lambda z: (float(np.clip(z[0], 0, 1)), float(np.clip(z[1], 0, 1)))
        simplex = np.array([[1.0, 0.5], [0.5, 0.5], [0.75, 0.1]])
        nm_bounds = [(0.0, 1.0), (0.0, 1.0)]
        x0 = simplex[0]
    else:
        beta_fixed = 1.0 if not allow_bias else 0.0
        _unpack = lambda z: (float(np.clip(z[0], 0, 1)), beta_fixed)
        simplex = np.array([[1.0], [0.5]])
        nm_bounds = [(0.0, 1.0)]
        x0 = simplex[0]

    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=nm_bounds,
        options={"initial_simplex": simplex, "maxfev": cfg.stage2_max_evals,
                 "xatol": 1e-6, "fatol": 1e-10},
    )
    alpha, beta = _unpack(res.x)
    best = hp_of(alpha, beta)
    # Stage 1 sits at the alpha=1 corner; never return anything worse.
    if -res.fun < log_marginal_likelihood(data, stage1):
        return stage1
    return best


def fit_stage3_joint(
    data: Dataset,
    stage2: CrnHyperparams,
    bounds: FitBounds,
    cfg: FitConfig = FitConfig(),
) -> CrnHyperparams:
    """Joint fine-tune of all currently-positive hyperparameters.

    Components at exactly zero (clamped by a model variant or pushed to a
    corner by stage 2) have zero gradient in log space and stay zero.
    """
    names = _free_names(stage2)
    hp, _ = _ascend_logml(data, stage2, names, bounds, cfg.stage3_steps)
    return hp


def warm_refit(
    data: Dataset,
    hp: CrnHyperparams,
    bounds: FitBounds,
    steps: int = 20,
) -> CrnHyperparams:
    """Short warm-started joint ascent used on off-schedule iterations."""
    hp = hp.with_(prior_mean=float(np.mean(data.y)))
    refined, _ = _ascend_logml(data, hp, _free_names(hp), bounds, steps)
    return refined


def fit_hyperparams(
    data: Dataset,
    bounds: FitBounds,
    rng: np.random.Generator,
    allow_offset: bool = True,
    allow_bias: bool = True,
    cfg: FitConfig = FitConfig(),
) -> CrnHyperparams:
    """Full three-stage pipeline with optional clamping of the offset and/or
    bias components (used by the model variants)."""
    stage1 = fit_stage1_independent(data, bounds, rng, cfg)
    if len(data) < cfg.small_n:
        return stage1
    stage2 = fit_stage2_split(data, stage1, cfg, allow_offset, allow_bias)
    return fit_stage3_joint(data, stage2, bounds, cfg)
