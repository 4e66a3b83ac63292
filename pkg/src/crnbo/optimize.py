"""Generic first-order ascent utilities shared by the model fitter and the
acquisition optimizer.

The line search only ever accepts strictly improving steps, which is what
gives the callers their monotonicity guarantees; on a rejected search the
routine stops early (treated as stationary).
"""

from __future__ import annotations

import numpy as np


def ascend(
    value_fn,
    grad_fn,
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    max_steps: int,
    initial_step: float = 1.0,
    max_halvings: int = 20,
    grad_tol: float = 1e-12,
):
    """Projected gradient ascent with backtracking halving line search.

    Returns (x_best, f_best, n_accepted).  The direction is the gradient
    normalized to unit infinity-norm so step sizes are in coordinate units;
    accepted step sizes carry over (doubled) to the next iteration.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f = value_fn(x)
    if not np.isfinite(f):
        return x, f, 0
    step = initial_step
    accepted = 0
    for _ in range(max_steps):
        g = np.asarray(grad_fn(x), dtype=float)
        gmax = np.max(np.abs(g)) if g.size else 0.0
        if not np.isfinite(gmax) or gmax < grad_tol:
            break
        direction = g / gmax
        t = step
        moved = False
        for _ in range(max_halvings):
            cand = np.clip(x + t * direction, lower, upper)
            if np.array_equal(cand, x):
                break
            fc = value_fn(cand)
            if np.isfinite(fc) and fc > f:
                x, f = cand, fc
                step = min(t * 2.0, initial_step * 8.0)
                moved = True
                accepted += 1
                break
            t *= 0.5
        if not moved:
            break
    return x, f, accepted


def central_difference_grad(fn, x: np.ndarray, h: np.ndarray | float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    grad = np.empty_like(x)
    for k in range(x.size):
        left = x.copy()
        right = x.copy()
        left[k] -= h[k]
        right[k] += h[k]
        grad[k] = (fn(right) - fn(left)) / (2.0 * h[k])
    return grad


def coordinate_ascent_lattice(value_batch_fn, x0: np.ndarray, domain, max_moves: int):
    """Greedy best-neighbor hill climb over a lattice domain.

    ``value_batch_fn`` maps an (m, d) array of points to m values; neighbors
    of the incumbent are scored in one batch per move.
    """
    x = domain.clip(np.asarray(x0, dtype=float))
    f = float(value_batch_fn(x.reshape(1, -1))[0])
    for _ in range(max_moves):
        neigh = domain.neighbors(x)
        if neigh.shape[0] == 0:
            break
        vals = np.asarray(value_batch_fn(neigh), dtype=float)
        best = int(np.argmax(vals))
        if vals[best] > f:
            x, f = neigh[best], float(vals[best])
        else:
            break
    return x, f
