"""Deterministic random-stream construction.

Every stochastic component in the package (simulators, designs, optimizer
restarts) draws from a generator keyed by a tuple of non-negative integers.
The same key always yields the same stream, independent of call order, which
is what makes simulator outputs pure functions of their inputs and whole
experiments replayable bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stable 32-bit tags for the string components of a stream key.
_TAG_BITS = 32


def _tag(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key components must be >= 0, got {part}")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[: _TAG_BITS // 8], "big")


def stream(*key) -> np.random.Generator:
    """Return a fresh generator for the given key tuple.

    Integer components are used verbatim (must be non-negative); strings are
    hashed to a stable 32-bit tag.  Distinct keys give independent streams.
    """
    entropy = [_tag(part) for part in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def substreams(base_key, count: int) -> list[np.random.Generator]:
    """Independent child streams ``stream(*base_key, i)`` for i in range(count)."""
    return [stream(*base_key, i) for i in range(count)]
