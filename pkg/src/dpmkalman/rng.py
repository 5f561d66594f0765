"""Seedable random streams.

Every stochastic operation in the package draws from an RngStream, a thin
stateful wrapper around numpy's PCG64 generator keyed by (seed, stream_id).
Two streams built from the same pair replay the same sequence; distinct
stream ids give statistically independent streams (SeedSequence spawn keys).
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """Stateful random stream identified by a 64-bit (seed, stream_id) pair."""

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, offset: int) -> "RngStream":
        """Independent stream derived from the same seed."""
        return RngStream(self.seed, self.stream_id + 1 + offset)

    # thin delegations, so callers never touch the generator directly
    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def gamma(self, shape, scale=1.0, size=None):
        return self._gen.gamma(shape, scale, size)

    def chisquare(self, df, size=None):
        return self._gen.chisquare(df, size)

    def beta(self, a, b, size=None):
        return self._gen.beta(a, b, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n, p=None):
        return int(self._gen.choice(n, p=p))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
