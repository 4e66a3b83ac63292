"""Gaussian-process surrogate over (solution, seed) input pairs.

The prior couples outputs that share a random seed: on top of the target
kernel, same-seed pairs pick up a constant offset variance, a bias kernel
(sharing the target's lengthscales) and a white-noise term on exact input
repeats.  Observed outputs are treated as deterministic given (x, s), so the
training covariance carries no independent noise diagonal; conditioning is
handled by an explicit, escalating jitter.

Seed labels 0 and -1 are reserved: they never match any seed (not even
themselves), which makes predictions at label 0 the posterior over the
seed-averaged target and the covariance between labels 0 and -1 the target's
posterior covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, LinAlgError

from .errors import ConditioningError, InvalidInputError
from .kernels import KERNELS, correlation

TARGET_SEED = 0
TARGET_SEED_ALT = -1

BASE_JITTER_FACTOR = 1e-8
MAX_JITTER_FACTOR = 1e-4
_VARIANCE_CLAMP = 1e-9


@dataclass(frozen=True)
class CrnHyperparams:
    """Kernel and mean parameters of the seed-coupled GP."""

    lengthscales: np.ndarray
    target_variance: float
    offset_variance: float = 0.0
    bias_variance: float = 0.0
    white_variance: float = 0.0
    prior_mean: float = 0.0
    kernel: str = "se"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(ls > 0):
            raise InvalidInputError("lengthscales must be positive")
        if not self.target_variance > 0:
            raise InvalidInputError("target_variance must be positive")
        for name in ("offset_variance", "bias_variance", "white_variance"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.kernel not in KERNELS:
            raise InvalidInputError(f"kernel must be one of {KERNELS}")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    @property
    def difference_variance(self) -> float:
        """Total variance of the per-seed difference function at a point."""
        return self.offset_variance + self.bias_variance + self.white_variance

    @property
    def rho(self) -> float:
        """Correlation of same-seed differences at distinct, far-apart points."""
        denom = self.offset_variance + self.white_variance
        return self.offset_variance / denom if denom > 0 else 0.0

    def with_(self, **kwargs) -> "CrnHyperparams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Dataset:
    """Observed triples (x, s, y) with seed bookkeeping.

    Outputs are deterministic given (x, s), so duplicate input pairs are
    rejected.  Observation seeds must be >= 1; labels 0 and -1 are reserved
    for target inference.
    """

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        s = np.atleast_1d(np.asarray(self.s, dtype=int))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)
        n = x.shape[0]
        if s.shape != (n,) or y.shape != (n,):
            raise InvalidInputError("x, s, y must have matching first dimension")
        if n and np.any(s < 1):
            raise InvalidInputError("observation seeds must be >= 1")
        if n:
            rows = {(int(si),) + tuple(xi) for xi, si in zip(x, s)}
            if len(rows) != n:
                raise InvalidInputError("duplicate (x, s) input pair in dataset")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def observed_seeds(self) -> set[int]:
        return set(int(v) for v in np.unique(self.s))

    @property
    def fresh_seed(self) -> int:
        """Smallest unobserved positive seed label above all observed ones."""
        return int(self.s.max()) + 1 if len(self) else 1

    def add(self, x_new, s_new: int, y_new: float) -> "Dataset":
        x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.x, x_new]) if len(self) else x_new,
            np.append(self.s, int(s_new)),
            np.append(self.y, float(y_new)),
        )

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0, dtype=int), np.empty(0))


def kernel_matrix(x1, s1, x2, s2, hp: CrnHyperparams) -> np.ndarray:
    """Prior covariance between input-pair collections, shape (m1, m2)."""
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    s1 = np.atleast_1d(np.asarray(s1, dtype=int))
    s2 = np.atleast_1d(np.asarray(s2, dtype=int))
    if x1.shape[1] != x2.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: {x1.shape[1]} vs {x2.shape[1]}"
        )
    if x1.shape[1] != hp.dim:
        raise InvalidInputError(
            f"dimension mismatch: points are {x1.shape[1]}-d, hyperparams are {hp.dim}-d"
        )
    if np.any(s1 < -1) or np.any(s2 < -1):
        raise InvalidInputError("seed labels below -1 are not allowed")
    corr = correlation(x1, x2, hp.lengthscales, hp.kernel)
    k = hp.target_variance * corr
    same_seed = (s1[:, None] == s2[None, :]) & (s1[:, None] >= 1)
    if same_seed.any():
        diff = hp.offset_variance + hp.bias_variance * corr
        if hp.white_variance > 0:
            same_x = np.all(x1[:, None, :] == x2[None, :, :], axis=2)
            diff = diff + hp.white_variance * (same_x & same_seed)
        k = k + np.where(same_seed, diff, 0.0)
    return k


def prior_kernel(x, s: int, x2, s2: int, hp: CrnHyperparams) -> float:
    """Prior covariance between two single input pairs."""
    return float(kernel_matrix([x], [s], [x2], [s2], hp)[0, 0])


def _factor_with_jitter(K: np.ndarray, hp: CrnHyperparams):
    """Lower Cholesky factor of K + jitter*I with escalating jitter.

    Returns (L, jitter_used).  The base jitter is always applied; it is
    escalated tenfold on factorization failure up to the maximum, past which
    a ConditioningError names the offending level.
    """
    jitter = BASE_JITTER_FACTOR * hp.target_variance
    max_jitter = MAX_JITTER_FACTOR * hp.target_variance
    eye = np.eye(K.shape[0])
    while True:
        try:
            L = cholesky(K + jitter * eye, lower=True)
            return L, jitter
        except LinAlgError:
            if jitter >= max_jitter:
                raise ConditioningError(
                    f"kernel matrix is not positive definite even at jitter "
                    f"{jitter:.3e} (= {MAX_JITTER_FACTOR:g} * target_variance)"
                ) from None
            jitter = min(jitter * 10.0, max_jitter)


@dataclass(frozen=True)
class Posterior:
    """Immutable fitted GP state; safe for concurrent read access."""

    data: Dataset
    hp: CrnHyperparams
    chol: np.ndarray
    weights: np.ndarray
    jitter: float

    def __len__(self) -> int:
        return len(self.data)

    @property
    def dim(self) -> int:
        return self.hp.dim

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve((self.chol, True), rhs)

    def mean_batch(self, x, s) -> np.ndarray:
        """Posterior mean at each (x_i, s_i); s may be scalar or per-row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.broadcast_to(np.asarray(s, dtype=int), (x.shape[0],))
        if len(self) == 0:
            return np.full(x.shape[0], self.hp.prior_mean)
        kx = kernel_matrix(x, s, self.data.x, self.data.s, self.hp)
        return self.hp.prior_mean + kx @ self.weights

    def mean(self, x, s: int) -> float:
        return float(self.mean_batch([x], [s])[0])

    def cov_batch(self, x1, s1, x2, s2) -> np.ndarray:
        """Posterior cross-covariance matrix, shape (m1, m2)."""
        x1 = np.atleast_2d(np.asarray(x1, dtype=float))
        x2 = np.atleast_2d(np.asarray(x2, dtype=float))
        s1 = np.broadcast_to(np.asarray(s1, dtype=int), (x1.shape[0],))
        s2 = np.broadcast_to(np.asarray(s2, dtype=int), (x2.shape[0],))
        k0 = kernel_matrix(x1, s1, x2, s2, self.hp)
        if len(self) == 0:
            return k0
        k1 = kernel_matrix(x1, s1, self.data.x, self.data.s, self.hp)
        k2 = kernel_matrix(self.data.x, self.data.s, x2, s2, self.hp)
        return k0 - k1 @ self._solve(k2)

    def cov(self, x, s: int, x2, s2: int) -> float:
        value = float(self.cov_batch([x], [s], [x2], [s2])[0, 0])
        same_pair = int(s) == int(s2) and np.array_equal(
            np.asarray(x, dtype=float).ravel(), np.asarray(x2, dtype=float).ravel()
        )
        if same_pair and value < 0.0:
            floor = -_VARIANCE_CLAMP * max(1.0, self.hp.target_variance)
            if value < floor:
                raise ConditioningError(
                    f"posterior variance {value:.3e} is below the round-off "
                    f"floor {floor:.3e}"
                )
            value = 0.0
        return value

    def variance(self, x, s: int) -> float:
        return self.cov(x, s, x, s)

    def target_mean_batch(self, x) -> np.ndarray:
        return self.mean_batch(x, TARGET_SEED)

    def target_mean(self, x) -> float:
        return self.mean(x, TARGET_SEED)

    def target_cov(self, x, x2) -> float:
        return self.cov(x, TARGET_SEED, x2, TARGET_SEED_ALT)


def fit_posterior(data: Dataset, hp: CrnHyperparams) -> Posterior:
    """Factor the training covariance and precompute prediction weights."""
    if len(data) == 0:
        raise InvalidInputError("fit_posterior requires a non-empty dataset")
    if data.dim != hp.dim:
        raise InvalidInputError(
            f"dimension mismatch: data is {data.dim}-d, hyperparams are {hp.dim}-d"
        )
    K = kernel_matrix(data.x, data.s, data.x, data.s, hp)
    L, jitter = _factor_with_jitter(K, hp)
    weights = cho_solve((L, True), data.y - hp.prior_mean)
    return Posterior(data=data, hp=hp, chol=L, weights=weights, jitter=jitter)


def prior_posterior(hp: CrnHyperparams, dim: int | None = None) -> Posterior:
    """Posterior under no data: prior mean and prior kernel."""
    d = hp.dim if dim is None else dim
    return Posterior(
        data=Dataset.empty(d),
        hp=hp,
        chol=np.empty((0, 0)),
        weights=np.empty(0),
        jitter=0.0,
    )


def posterior_mean(p: Posterior, x, s: int) -> float:
    return p.mean(x, s)


def posterior_cov(p: Posterior, x, s: int, x2, s2: int) -> float:
    return p.cov(x, s, x2, s2)


def target_mean(p: Posterior, x) -> float:
    return p.target_mean(x)


def target_cov(p: Posterior, x, x2) -> float:
    return p.target_cov(x, x2)
