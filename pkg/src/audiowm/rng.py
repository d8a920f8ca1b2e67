"""Seeded random streams.

Uniforms come from numpy's PCG64 bit generator; normals are produced from
that uniform stream with the Box-Muller transform so that the normal stream is
a documented, portable function of the uniform one.
"""

from __future__ import annotations

import math
import zlib

import numpy as np


def _word(part) -> int:
    # strings label sub-streams, e.g. Rng((seed, "sample"))
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


class Rng:
    def __init__(self, seed):
        self.seed = seed
        entropy = [_word(s) for s in seed] if isinstance(seed, (tuple, list)) else _word(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def uniform(self, size=None, low=0.0, high=1.0):
        return low + (high - low) * self._gen.random(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2 * math.pi * u2)
        z[1::2] = r * np.sin(2 * math.pi * u2)
        z = z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, high: int, size=None):
        """Uniform integers in [0, high)."""
        if high < 1:
            raise ValueError("high must be >= 1")
        u = np.asarray(self._gen.random(size))
        out = np.minimum((u * high).astype(np.int64), high - 1)
        return int(out) if size is None else out

    def bernoulli(self, p: float, size=None):
        return self._gen.random(size) < p

    def permutation(self, n: int):
        keys = self._gen.random(n)
        return np.argsort(keys, kind="stable")


def seeded_rng(seed) -> Rng:
    return Rng(seed)
