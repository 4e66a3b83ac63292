"""Shared test fixtures: random problem instances and independent oracles.

The oracles here deliberately re-derive quantities with their own dense
linear algebra (plain solves, no shared factorizations) so they stay
independent of the library code paths they check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from crnbo.gp import CrnHyperparams, Dataset


def random_instance(seed: int, max_d: int = 3, max_n: int = 30, scale: float = 1.0):
    """Random dataset + hyperparameters with mixed repeated seeds."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(max(5, max_n // 3), max_n + 1))
    x = rng.random((n, d)) * 4.0
    s = rng.integers(1, max(2, n // 4) + 1, size=n)
    hp = CrnHyperparams(
        lengthscales=0.8 + rng.random(d) * 1.5,
        target_variance=scale * (0.5 + rng.random()),
        offset_variance=scale * rng.random() * 0.5,
        bias_variance=scale * rng.random() * 0.4,
        white_variance=scale * (0.05 + rng.random() * 0.4),
        prior_mean=float(rng.normal()),
    )
    y = hp.prior_mean + rng.normal(0.0, math.sqrt(scale), n)
    return Dataset(x, s, y), hp, rng


def se_corr(x1, x2, ls):
    z1 = np.atleast_2d(x1) / ls
    z2 = np.atleast_2d(x2) / ls
    d2 = (
        np.sum(z1 * z1, 1)[:, None] + np.sum(z2 * z2, 1)[None, :] - 2.0 * z1 @ z2.T
    )
    return np.exp(-0.5 * np.maximum(d2, 0.0))


def correlated_noise_gp_oracle(data: Dataset, hp: CrnHyperparams):
    """Target posterior via the target-kernel + masked-difference-noise GP
    regression formula, solved densely.

    Returns (mean_fn, cov_fn) over plain solution points.
    """
    ls = hp.lengthscales
    corr = se_corr(data.x, data.x, ls)
    mask = data.s[:, None] == data.s[None, :]
    noise = mask * (hp.offset_variance + hp.bias_variance * corr)
    same_x = np.all(data.x[:, None, :] == data.x[None, :, :], axis=2)
    noise = noise + hp.white_variance * (mask & same_x)
    K = hp.target_variance * corr + noise + 1e-8 * hp.target_variance * np.eye(len(data))
    Kinv_y = np.linalg.solve(K, data.y - hp.prior_mean)

    def mean_fn(x):
        kx = hp.target_variance * se_corr([np.ravel(x)], data.x, ls)[0]
        return float(hp.prior_mean + kx @ Kinv_y)

    def cov_fn(x, x2):
        kx = hp.target_variance * se_corr([np.ravel(x)], data.x, ls)[0]
        kx2 = hp.target_variance * se_corr([np.ravel(x2)], data.x, ls)[0]
        k0 = hp.target_variance * se_corr([np.ravel(x)], [np.ravel(x2)], ls)[0, 0]
        return float(k0 - kx @ np.linalg.solve(K, kx2))

    return mean_fn, cov_fn


def homoskedastic_gp_oracle(x_train, y_train, ls, signal_var, noise_var, prior_mean):
    """Plain noisy GP regression oracle (independent outputs)."""
    K = signal_var * se_corr(x_train, x_train, ls) + (
        noise_var + 1e-8 * signal_var
    ) * np.eye(len(y_train))
    alpha = np.linalg.solve(K, np.asarray(y_train) - prior_mean)

    def mean_fn(x):
        kx = signal_var * se_corr([np.ravel(x)], x_train, ls)[0]
        return float(prior_mean + kx @ alpha)

    def cov_fn(x, x2):
        kx = signal_var * se_corr([np.ravel(x)], x_train, ls)[0]
        kx2 = signal_var * se_corr([np.ravel(x2)], x_train, ls)[0]
        k0 = signal_var * se_corr([np.ravel(x)], [np.ravel(x2)], ls)[0, 0]
        return float(k0 - kx @ np.linalg.solve(K, kx2))

    return mean_fn, cov_fn


def expected_improvement(delta: float, spread: float) -> float:
    """Closed-form E[max(0, delta + spread Z)] for spread >= 0."""
    if spread <= 0.0:
        return max(delta, 0.0)
    z = delta / spread
    return delta * ndtr(z) + spread * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def mc_expected_max_affine(a, b, n_draws: int, seed: int = 0):
    """Monte-Carlo estimate of E[max_i a_i + b_i Z] with its standard error."""
    rng = np.random.default_rng(seed)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 200_000
    while done < n_draws:
        m = min(chunk, n_draws - done)
        z = rng.standard_normal(m)
        vals = np.max(a[None, :] + z[:, None] * b[None, :], axis=1)
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        done += m
    mean = total / n_draws
    var = total_sq / n_draws - mean**2
    return mean, math.sqrt(max(var, 0.0) / n_draws)


def compound_spheric_instance(seed: int, n: int = 12, rho: float = 1.0,
                              total: float = 1.0, grid_size: int = 0):
    """Dataset + hyperparams with no bias term (offset/white split by rho)."""
    rng = np.random.default_rng(seed)
    if grid_size:
        grid = np.arange(1.0, grid_size + 1.0).reshape(-1, 1)
        idx = rng.permutation(grid_size)[:n]
        x = grid[idx]
    else:
        x = rng.random((n, 1)) * 10.0
        grid = None
    s = rng.integers(1, 4, size=n)
    hp = CrnHyperparams(
        lengthscales=[2.0],
        target_variance=4.0,
        offset_variance=rho * total,
        bias_variance=0.0,
        white_variance=(1.0 - rho) * total,
        prior_mean=0.0,
    )
    y = rng.normal(0.0, 2.0, n)
    return Dataset(x, s, y), hp, grid, rng
