"""Seeded randomness with independent named streams.

All stochastic choices in the package (parameter init, task generation,
training shuffles) flow through an ``Rng`` so that a run is reproducible
from a single integer seed.  Distinct purposes get distinct stream ids
derived from the same seed, so e.g. evaluation data does not perturb the
training stream.
"""

from __future__ import annotations

import numpy as np

# Stream ids by convention; any int works, these just keep call sites honest.
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_TASK = 3


class Rng:
    """A deterministic generator keyed by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, stream: int) -> "Rng":
        """A fresh generator for the same seed under a different stream id."""
        return Rng(self.seed, stream)

    # Thin passthroughs to the underlying numpy Generator.

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Integers in ``[low, high)`` (numpy convention, high exclusive)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def bits(self, size) -> np.ndarray:
        """Uniform 0/1 floats, the raw material for binary task patterns."""
        return self._gen.integers(0, 2, size=size).astype(np.float64)
