"""Deterministic, splittable random streams.

Every stochastic element of the pipeline (weight init, positional fuzzing,
data synthesis, shuffling) draws from an RngStream identified by a
(seed, stream_id) pair.  Streams are counter-based (Philox), so the same
pair reproduces the same draw sequence on every platform, and distinct
stream_ids give statistically independent streams without coordination.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
# SplitMix64-style odd multiplier, used to derive child stream ids.
_GOLDEN = 0x9E3779B97F4A7C15


class RngStream:
    """A seeded random stream with a fixed (seed, stream_id) identity.

    Re-creating a stream with the same identity replays the identical
    sequence from the start.  Use `child(k)` to derive independent
    sub-streams deterministically.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = (self.stream_id << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, k: int) -> "RngStream":
        """Derive an independent stream; same (seed, stream_id, k) -> same child."""
        derived = ((self.stream_id * _GOLDEN) + int(k) + 1) & _MASK64
        return RngStream(self.seed, derived)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
