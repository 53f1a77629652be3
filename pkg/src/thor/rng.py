"""Deterministic seeded randomness.

Every random draw in the package (parameter init, synthetic data, point
sampling) flows through an `Rng` so that a single 64-bit seed fully
determines a run. Child streams are derived by splitmix64 mixing of the
parent seed with a stable tag hash, so adding a new consumer never
perturbs existing streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


class Rng:
    """Seeded random stream with derivable child streams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        _, mixed = splitmix64(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(mixed))

    def child(self, tag) -> "Rng":
        """Derive an independent stream named by `tag` (str or int)."""
        if isinstance(tag, int):
            tag_hash = tag & _MASK64
        else:
            tag_hash = _fnv1a64(str(tag).encode("utf-8"))
        _, mixed = splitmix64(self.seed ^ tag_hash)
        return Rng(mixed)

    def normal(self, shape=(), std=1.0, mean=0.0):
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape=(), low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high, shape=()):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def choice(self, n: int, size, p=None, replace=True):
        return self._gen.choice(n, size=size, p=p, replace=replace)
