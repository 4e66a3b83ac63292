"""Solution-space domains and space-filling designs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def latin_hypercube(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n points in [0, 1)^dim with one point per axis-aligned stratum."""
    u = rng.random((n, dim))
    out = np.empty((n, dim))
    for k in range(dim):
        out[:, k] = (rng.permutation(n) + u[:, k]) / n
    return out


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned continuous box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidInputError("box bounds must satisfy lower < upper")

    kind = "box"

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + rng.random((n, self.dim)) * self.width

    def lhc(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + latin_hypercube(rng, n, self.dim) * self.width


@dataclass(frozen=True)
class LatticeDomain:
    """Integer box lattice (inclusive bounds)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=int))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=int))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise InvalidInputError("lattice bounds must satisfy lower <= upper")

    kind = "lattice"

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return (self.upper - self.lower).astype(float)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        return bool(
            np.all(x == np.round(x))
            and np.all(x >= self.lower)
            and np.all(x <= self.upper)
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.round(np.asarray(x, dtype=float)), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = [rng.integers(self.lower[k], self.upper[k] + 1, size=n) for k in range(self.dim)]
        return np.stack(cols, axis=1).astype(float)

    def lhc(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raw = self.lower + latin_hypercube(rng, n, self.dim) * (self.width + 1.0) - 0.5
        return self.clip(raw)

    def neighbors(self, x: np.ndarray) -> np.ndarray:
        """All +-1 single-coordinate moves that stay inside the lattice."""
        x = np.asarray(x, dtype=float).ravel()
        moves = []
        for k in range(self.dim):
            for step in (-1.0, 1.0):
                cand = x.copy()
                cand[k] += step
                if self.lower[k] <= cand[k] <= self.upper[k]:
                    moves.append(cand)
        return np.array(moves) if moves else np.empty((0, self.dim))


@dataclass(frozen=True)
class FiniteDomain:
    """Explicitly enumerated finite solution set."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        if pts.shape[0] == 0:
            raise InvalidInputError("finite domain needs at least one point")

    kind = "finite"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def lower(self) -> np.ndarray:
        return self.points.min(axis=0)

    @property
    def upper(self) -> np.ndarray:
        return self.points.max(axis=0)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        return self.index_of(x) is not None

    def index_of(self, x) -> int | None:
        x = np.asarray(x, dtype=float).ravel()
        hits = np.where(np.all(self.points == x, axis=1))[0]
        return int(hits[0]) if hits.size else None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, self.points.shape[0], size=n)
        return self.points[idx]


Domain = BoxDomain | LatticeDomain | FiniteDomain
