"""Knowledge-gradient acquisition values over the (solution, seed) space.

The one-step value of a candidate evaluation is the expected increase in the
peak of the predicted target.  With the inner maximization restricted to a
frozen finite set, that expectation is an exact integral over the upper
envelope of affine functions of a standard normal variable, computed here by
the classic sort-and-sweep epigraph algorithm together with its gradient with
respect to the candidate solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .designs import FiniteDomain
from .errors import DegenerateCandidateError, InvalidInputError
from .gp import Posterior, kernel_matrix
from .kernels import correlation_grad_x

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Candidates whose one-step variance falls below this fraction of the signal
# variance are treated as already determined (re-sampling them has no value).
DEGENERATE_VARIANCE_FACTOR = 1e-12

# Pre-clamp negativity beyond this (relative) magnitude is reported.
_NEGATIVE_WARN = 1e-6

try:  # pragma: no cover - exercised implicitly
    from numba import njit
except ModuleNotFoundError:  # pragma: no cover
    njit = None


def _hull_impl(a, b):
    """Upper-envelope sweep over lines sorted by strictly increasing slope.

    Returns (positions kept, left breakpoints); breakpoint[0] is -inf.
    """
    m = a.shape[0]
    stack = np.empty(m, np.int64)
    z = np.empty(m, np.float64)
    top = -1
    for j in range(m):
        zj = -np.inf
        while top >= 0:
            i = stack[top]
            zj = (a[i] - a[j]) / (b[j] - b[i])
            if zj <= z[top]:
                top -= 1
            else:
                break
        if top < 0:
            zj = -np.inf
        top += 1
        stack[top] = j
        z[top] = zj
    return stack[: top + 1].copy(), z[: top + 1].copy()


_hull = njit(cache=True)(_hull_impl) if njit is not None else _hull_impl


def _phi(z: np.ndarray) -> np.ndarray:
    out = np.exp(-0.5 * np.square(z)) * _INV_SQRT_2PI
    return np.where(np.isfinite(z), out, 0.0)


def _envelope(a: np.ndarray, b: np.ndarray):
    """Envelope of a_i + b_i z: (kept original indices, breakpoints len+1)."""
    order = np.lexsort((a, b))
    b_sorted = b[order]
    # Ties on slope keep the max intercept (the last of each sorted run);
    # exact duplicates collapse to one line.
    last_of_run = np.ones(order.size, dtype=bool)
    last_of_run[:-1] = b_sorted[1:] != b_sorted[:-1]
    idx = order[last_of_run]
    kept_pos, z = _hull(np.ascontiguousarray(a[idx]), np.ascontiguousarray(b[idx]))
    breakpoints = np.append(z, np.inf)
    return idx[kept_pos], breakpoints


def expected_max_affine(intercepts, slopes) -> float:
    """E_Z[max_i intercepts_i + slopes_i * Z] for Z ~ N(0, 1), exactly."""
    a = np.atleast_1d(np.asarray(intercepts, dtype=float))
    b = np.atleast_1d(np.asarray(slopes, dtype=float))
    if a.size == 0:
        raise InvalidInputError("expected_max_affine needs at least one line")
    if a.shape != b.shape:
        raise InvalidInputError("intercepts and slopes must have equal length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("intercepts and slopes must be finite")
    kept, c = _envelope(a, b)
    cdf = ndtr(c)
    pdf = _phi(c)
    return float(np.sum(a[kept] * np.diff(cdf)) + np.sum(b[kept] * (-np.diff(pdf))))


@dataclass(frozen=True)
class DiscretizationSet:
    """Inner-maximization point set, frozen for one iteration."""

    points: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))


def build_discretization(
    post: Posterior,
    domain,
    rng: np.random.Generator,
    iteration: int = 0,
    perturb_scale: float = 0.1,
) -> DiscretizationSet:
    """Latin hypercube plus Gaussian perturbations of past solutions.

    Finite domains are small enough to use whole.  Perturbed points are
    clipped into the domain and exact duplicates are dropped.
    """
    if isinstance(domain, FiniteDomain):
        return DiscretizationSet(domain.points, iteration)
    n = max(len(post), 1)
    parts = [domain.lhc(rng, n)]
    if len(post):
        noise = rng.standard_normal(post.data.x.shape) * (perturb_scale * domain.width)
        parts.append(domain.clip(post.data.x + noise))
    points = np.unique(np.vstack(parts), axis=0)
    return DiscretizationSet(points, iteration)


@dataclass(frozen=True)
class AcquisitionSpace:
    """Solution domain crossed with the observed seeds plus one fresh seed."""

    domain: object
    observed_seeds: tuple[int, ...]
    fresh_seed: int

    def __post_init__(self):
        if self.fresh_seed in self.observed_seeds:
            raise InvalidInputError("fresh seed must be unobserved")

    @property
    def candidate_seeds(self) -> tuple[int, ...]:
        return tuple(sorted(self.observed_seeds)) + (self.fresh_seed,)

    @classmethod
    def from_posterior(cls, post: Posterior, domain) -> "AcquisitionSpace":
        observed = tuple(sorted(post.data.observed_seeds))
        return cls(domain=domain, observed_seeds=observed, fresh_seed=post.data.fresh_seed)


class AcquisitionEngine:
    """Precomputed state for evaluating acquisition values over a frozen
    discretization.  Pure read-only use of an immutable posterior."""

    def __init__(self, post: Posterior, disc: DiscretizationSet | np.ndarray):
        points = disc.points if isinstance(disc, DiscretizationSet) else np.atleast_2d(disc)
        self.post = post
        self.hp = post.hp
        self.A = np.asarray(points, dtype=float)
        m = self.A.shape[0]
        zeros = np.zeros(m, dtype=int)
        self.a_disc = post.mean_batch(self.A, zeros)
        if len(post):
            C = kernel_matrix(self.A, zeros, post.data.x, post.data.s, post.hp)
            self.CKinv = post._solve(C.T).T
        else:
            self.CKinv = np.empty((m, 0))
        self.prior_cand_var = post.hp.target_variance + post.hp.difference_variance
        # Observed pairs carry a phantom posterior variance on the order of
        # the diagonal jitter; anything at that floor is already determined.
        self.degenerate_threshold = max(
            DEGENERATE_VARIANCE_FACTOR * post.hp.target_variance, 2.0 * post.jitter
        )

    def observed_mask(self, xs: np.ndarray, s: int) -> np.ndarray:
        """True where (xs_i, s) exactly matches an observed input pair."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        data = self.post.data
        if len(data) == 0:
            return np.zeros(xs.shape[0], dtype=bool)
        seed_rows = data.x[data.s == s]
        if seed_rows.shape[0] == 0:
            return np.zeros(xs.shape[0], dtype=bool)
        return np.any(np.all(xs[:, None, :] == seed_rows[None, :, :], axis=2), axis=1)

    # -- single-candidate value and gradient -------------------------------

    def _candidate_vectors(self, x: np.ndarray, s: int):
        post = self.post
        if len(post):
            q = kernel_matrix(post.data.x, post.data.s, [x], [s], self.hp)[:, 0]
            kq = post._solve(q)
            var_c = self.prior_cand_var - q @ kq
            r = kernel_matrix(post.data.x, post.data.s, [x], [0], self.hp)[:, 0]
        else:
            q = kq = r = np.empty(0)
            var_c = self.prior_cand_var
        return q, kq, r, float(var_c)

    def kg(self, x, s: int, need_grad: bool = False):
        """Discretized knowledge-gradient value (and optionally its gradient
        with respect to the candidate solution) at candidate (x, s)."""
        x = np.asarray(x, dtype=float).ravel()
        if s < 1:
            raise InvalidInputError("candidate seeds must be >= 1")
        post, hp = self.post, self.hp
        zero_grad = np.zeros(x.size)
        if self.observed_mask(x.reshape(1, -1), s)[0]:
            return (0.0, zero_grad) if need_grad else 0.0
        q, kq, r, var_c = self._candidate_vectors(x, s)
        if var_c <= self.degenerate_threshold:
            return (0.0, zero_grad) if need_grad else 0.0
        sigma_c = math.sqrt(var_c)

        vA = kernel_matrix(self.A, np.zeros(self.A.shape[0], int), [x], [s], hp)[:, 0]
        a_c = hp.prior_mean
        v_c = hp.target_variance
        if len(post):
            vA = vA - self.CKinv @ q
            a_c += r @ post.weights
            v_c -= r @ kq
        a = np.append(self.a_disc, a_c)
        v = np.append(vA, v_c)
        b = v / sigma_c

        kept, c = _envelope(a, b)
        cdf_diff = np.diff(ndtr(c))
        pdf_diff = -np.diff(_phi(c))
        value = float(np.sum(a[kept] * cdf_diff) + np.sum(b[kept] * pdf_diff)) - float(np.max(a))
        if value < -_NEGATIVE_WARN * max(1.0, hp.target_variance):
            log.warning("knowledge-gradient value %.3e clamped to zero", value)
        value = max(value, 0.0)
        if not need_grad:
            return value

        # Gradient: intercept terms move only through the appended candidate
        # row; slope terms move everywhere through the one-step covariance.
        grad_corr = correlation_grad_x(x, post.data.x, hp.lengthscales, hp.kernel) if len(post) else np.empty((0, x.size))
        dr = hp.target_variance * grad_corr
        if len(post):
            same = (post.data.s == s).astype(float)
            dq = (hp.target_variance + hp.bias_variance * same)[:, None] * grad_corr
            kr = post._solve(r)
            da_c = dr.T @ post.weights
            dv_c = -(dr.T @ kq + dq.T @ kr)
            dvar_c = -2.0 * (dq.T @ kq)
            dvA = hp.target_variance * correlation_grad_x(x, self.A, hp.lengthscales, hp.kernel) - self.CKinv @ dq
        else:
            da_c = np.zeros(x.size)
            dv_c = np.zeros(x.size)
            dvar_c = np.zeros(x.size)
            dvA = hp.target_variance * correlation_grad_x(x, self.A, hp.lengthscales, hp.kernel)
        dv = np.vstack([dvA, dv_c])
        db = dv / sigma_c - np.outer(v, dvar_c) / (2.0 * sigma_c**3)

        cand_row = a.size - 1
        grad = db[kept].T @ pdf_diff
        kept_cand = np.where(kept == cand_row)[0]
        if kept_cand.size:
            grad = grad + da_c * cdf_diff[kept_cand[0]]
        if int(np.argmax(a)) == cand_row:
            grad = grad - da_c
        return value, grad

    # -- batched value over many candidates sharing one seed ---------------

    def kg_batch(self, xs: np.ndarray, s: int) -> np.ndarray:
        """Knowledge-gradient values for each row of xs at seed s."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if s < 1:
            raise InvalidInputError("candidate seeds must be >= 1")
        post, hp = self.post, self.hp
        mc = xs.shape[0]
        seeds = np.full(mc, s, dtype=int)
        zeros = np.zeros(mc, dtype=int)
        if len(post):
            Q = kernel_matrix(post.data.x, post.data.s, xs, seeds, hp)
            KQ = post._solve(Q)
            R = kernel_matrix(post.data.x, post.data.s, xs, zeros, hp)
            var = self.prior_cand_var - np.einsum("ij,ij->j", Q, KQ)
            a_c = hp.prior_mean + post.weights @ R
            v_c = hp.target_variance - np.einsum("ij,ij->j", R, KQ)
            VA = kernel_matrix(self.A, np.zeros(self.A.shape[0], int), xs, seeds, hp) - self.CKinv @ Q
        else:
            var = np.full(mc, self.prior_cand_var)
            a_c = np.full(mc, hp.prior_mean)
            v_c = np.full(mc, hp.target_variance)
            VA = kernel_matrix(self.A, np.zeros(self.A.shape[0], int), xs, seeds, hp)

        observed = self.observed_mask(xs, s)
        values = np.zeros(mc)
        for c in range(mc):
            if observed[c] or var[c] <= self.degenerate_threshold:
                continue
            a = np.append(self.a_disc, a_c[c])
            b = np.append(VA[:, c], v_c[c]) / math.sqrt(var[c])
            kept, brk = _envelope(a, b)
            cdf_diff = np.diff(ndtr(brk))
            pdf_diff = -np.diff(_phi(brk))
            val = float(np.sum(a[kept] * cdf_diff) + np.sum(b[kept] * pdf_diff)) - float(np.max(a))
            values[c] = max(val, 0.0)
        return values

    # -- pairwise (same fresh seed) value -----------------------------------

    def kg_pw(self, xi, xj, fresh_seed: int) -> float:
        """Per-sample value of observing the pair (xi, xj) on one fresh seed,
        scored through the difference of the two outcomes."""
        xi = np.asarray(xi, dtype=float).ravel()
        xj = np.asarray(xj, dtype=float).ravel()
        if np.array_equal(xi, xj):
            raise InvalidInputError("pairwise candidates must be distinct")
        post, hp = self.post, self.hp
        s = fresh_seed
        qi, kqi, ri, var_i = self._candidate_vectors(xi, s)
        qj, kqj, rj, var_j = self._candidate_vectors(xj, s)
        cross = kernel_matrix([xi], [s], [xj], [s], hp)[0, 0]
        a_i = hp.prior_mean
        a_j = hp.prior_mean
        tv = hp.target_variance
        corr_ij = kernel_matrix([xi], [0], [xj], [0], hp)[0, 0]  # = tv * corr
        if len(post):
            cross -= qi @ kqj
            a_i += ri @ post.weights
            a_j += rj @ post.weights
        denom2 = var_i + var_j - 2.0 * cross
        if denom2 <= self.degenerate_threshold:
            return 0.0
        denom = math.sqrt(denom2)

        zerosA = np.zeros(self.A.shape[0], int)
        kAi = kernel_matrix(self.A, zerosA, [xi], [s], hp)[:, 0]
        kAj = kernel_matrix(self.A, zerosA, [xj], [s], hp)[:, 0]
        # k^n(xi,0; xi,s), k^n(xi,0; xj,s) and the xj-row analogues.
        vii, vij = tv, corr_ij
        vji, vjj = corr_ij, tv
        if len(post):
            kAi = kAi - self.CKinv @ qi
            kAj = kAj - self.CKinv @ qj
            vii -= ri @ kqi
            vij -= ri @ kqj
            vji -= rj @ kqi
            vjj -= rj @ kqj
        num = np.concatenate([kAi - kAj, [vii - vij, vji - vjj]])
        a = np.concatenate([self.a_disc, [a_i, a_j]])
        b = num / denom
        kept, brk = _envelope(a, b)
        cdf_diff = np.diff(ndtr(brk))
        pdf_diff = -np.diff(_phi(brk))
        val = float(np.sum(a[kept] * cdf_diff) + np.sum(b[kept] * pdf_diff)) - float(np.max(a))
        return 0.5 * max(val, 0.0)

    def kg_pw_batch(self, x1, partners: np.ndarray, fresh_seed: int) -> np.ndarray:
        """Pairwise values for one fixed first member against each partner
        row; rows identical to the first member score zero."""
        x1 = np.asarray(x1, dtype=float).ravel()
        partners = np.atleast_2d(np.asarray(partners, dtype=float))
        post, hp = self.post, self.hp
        s = fresh_seed
        tv = hp.target_variance
        mc = partners.shape[0]
        seeds = np.full(mc, s, dtype=int)
        zerosA = np.zeros(self.A.shape[0], int)

        q1, kq1, r1, var_1 = self._candidate_vectors(x1, s)
        a_1 = hp.prior_mean
        kA1 = kernel_matrix(self.A, zerosA, [x1], [s], hp)[:, 0]
        v11 = tv
        if len(post):
            a_1 += r1 @ post.weights
            kA1 = kA1 - self.CKinv @ q1
            v11 -= r1 @ kq1
        corr_1p = kernel_matrix([x1], [0], partners, np.zeros(mc, int), hp)[0]  # tv * corr
        cross = kernel_matrix([x1], [s], partners, seeds, hp)[0]
        if len(post):
            Q2 = kernel_matrix(post.data.x, post.data.s, partners, seeds, hp)
            KQ2 = post._solve(Q2)
            R2 = kernel_matrix(post.data.x, post.data.s, partners, np.zeros(mc, int), hp)
            var_2 = self.prior_cand_var - np.einsum("ij,ij->j", Q2, KQ2)
            a_2 = hp.prior_mean + post.weights @ R2
            cross = cross - q1 @ KQ2
            kA2 = kernel_matrix(self.A, zerosA, partners, seeds, hp) - self.CKinv @ Q2
            v12 = corr_1p - r1 @ KQ2            # k^n(x1,0; x2,s)
            v21 = corr_1p - kq1 @ R2            # k^n(x2,0; x1,s)
            v22 = tv - np.einsum("ij,ij->j", R2, KQ2)
        else:
            var_2 = np.full(mc, self.prior_cand_var)
            a_2 = np.full(mc, hp.prior_mean)
            kA2 = kernel_matrix(self.A, zerosA, partners, seeds, hp)
            v12 = v21 = corr_1p.copy()
            v22 = np.full(mc, tv)

        values = np.zeros(mc)
        identical = np.all(partners == x1, axis=1)
        denom2 = var_1 + var_2 - 2.0 * cross
        for c in range(mc):
            if identical[c] or denom2[c] <= self.degenerate_threshold:
                continue
            denom = math.sqrt(denom2[c])
            num = np.concatenate([kA1 - kA2[:, c], [v11 - v12[c], v21[c] - v22[c]]])
            a = np.concatenate([self.a_disc, [a_1, a_2[c]]])
            b = num / denom
            kept, brk = _envelope(a, b)
            cdf_diff = np.diff(ndtr(brk))
            pdf_diff = -np.diff(_phi(brk))
            val = float(np.sum(a[kept] * cdf_diff) + np.sum(b[kept] * pdf_diff)) - float(np.max(a))
            values[c] = 0.5 * max(val, 0.0)
        return values


# -- spec-level convenience wrappers ----------------------------------------


def sigma_tilde(post: Posterior, x_pred, cand_x, cand_s: int) -> float:
    """Deterministic one-step update coefficient of the target prediction at
    x_pred per unit standard-normal draw at the candidate."""
    cand_x = np.asarray(cand_x, dtype=float).ravel()
    data = post.data
    observed = len(data) > 0 and bool(
        np.any((data.s == cand_s) & np.all(data.x == cand_x, axis=1))
    )
    var_c = post.cov_batch([cand_x], [cand_s], [cand_x], [cand_s])[0, 0]
    threshold = max(DEGENERATE_VARIANCE_FACTOR * post.hp.target_variance, 2.0 * post.jitter)
    if observed or var_c <= threshold:
        raise DegenerateCandidateError(
            "candidate is already determined by the data (near-zero variance)"
        )
    cov = post.cov_batch([np.asarray(x_pred, dtype=float).ravel()], [0], [cand_x], [cand_s])[0, 0]
    return float(cov / math.sqrt(var_c))


def _points_of(A) -> np.ndarray:
    return A.points if isinstance(A, DiscretizationSet) else np.atleast_2d(np.asarray(A, dtype=float))


def kg_crn(post: Posterior, cand_x, cand_s: int, A) -> float:
    """Knowledge gradient of candidate (x, s) with the inner maximization
    discretized over A plus the candidate itself.  Non-negative."""
    return AcquisitionEngine(post, _points_of(A)).kg(cand_x, cand_s)


def kg_crn_gradient(post: Posterior, cand_x, cand_s: int, A) -> np.ndarray:
    """Gradient of kg_crn with respect to the candidate solution, holding the
    discretization frozen (the appended candidate point moves with it)."""
    return AcquisitionEngine(post, _points_of(A)).kg(cand_x, cand_s, need_grad=True)[1]


def kg_pw(post: Posterior, xi, xj, A, fresh_seed: int | None = None) -> float:
    """Pairwise acquisition value per sample; both points share a fresh seed."""
    fresh = post.data.fresh_seed if fresh_seed is None else fresh_seed
    return AcquisitionEngine(post, _points_of(A)).kg_pw(xi, xj, fresh)
