"""Stationary correlation functions over the solution space.

The surrogate model composes these unit-variance correlations with the
variance parameters held in ``CrnHyperparams``.  The squared-exponential
family is the default; Matern 5/2 is available behind the same interface.
All functions work on scaled squared distances so that lengthscale
derivatives can share the pairwise distance computation.
"""

from __future__ import annotations

import numpy as np

KERNELS = ("se", "matern52")

_SQRT5 = np.sqrt(5.0)


def scaled_sqdist(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise sum_k (x1_ik - x2_jk)^2 / l_k^2, shape (m1, m2)."""
    z1 = np.asarray(x1, dtype=float) / lengthscales
    z2 = np.asarray(x2, dtype=float) / lengthscales
    d2 = (
        np.sum(z1 * z1, axis=1)[:, None]
        + np.sum(z2 * z2, axis=1)[None, :]
        - 2.0 * (z1 @ z2.T)
    )
    return np.maximum(d2, 0.0)


def correlation_from_sqdist(r2: np.ndarray, kind: str = "se") -> np.ndarray:
    if kind == "se":
        return np.exp(-0.5 * r2)
    if kind == "matern52":
        r = np.sqrt(r2)
        return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-_SQRT5 * r)
    raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNELS}")


def correlation(x1, x2, lengthscales, kind: str = "se") -> np.ndarray:
    """Unit-variance correlation matrix, shape (m1, m2)."""
    return correlation_from_sqdist(scaled_sqdist(x1, x2, lengthscales), kind)


def correlation_dr2(r2: np.ndarray, kind: str = "se") -> np.ndarray:
    """Derivative of the correlation with respect to the scaled squared
    distance r2; finite at r2 = 0 for both families."""
    if kind == "se":
        return -0.5 * np.exp(-0.5 * r2)
    if kind == "matern52":
        r = np.sqrt(r2)
        return -(5.0 / 6.0) * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNELS}")


def correlation_grad_x(x: np.ndarray, x2: np.ndarray, lengthscales, kind: str = "se") -> np.ndarray:
    """Gradient of correlation(x, x2_j) with respect to the single point x.

    Returns shape (m2, d): row j is d/dx corr(x, x2_j).
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float)
    ls = np.asarray(lengthscales, dtype=float)
    r2 = scaled_sqdist(x, x2, ls)[0]
    dr2_dx = 2.0 * (x - x2) / ls**2
    return correlation_dr2(r2, kind)[:, None] * dr2_dx
