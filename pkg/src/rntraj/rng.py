"""Seeded random streams: PCG64 uniforms, Box-Muller normals, derived child streams."""
from __future__ import annotations

import numpy as np


class SeededRNG:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        u = self._gen.random(size)
        return low + (high - low) * u if (low, high) != (0.0, 1.0) else u

    def normal(self, size=None):
        """Standard normal draws by the Box-Muller transform."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self, *key: int) -> "SeededRNG":
        """Independent stream derived from this seed and ``key``; does not advance self."""
        ss = np.random.SeedSequence([self.seed, *[int(k) for k in key]])
        return SeededRNG(int(ss.generate_state(1, np.uint64)[0]))


def seeded_rng(seed: int) -> SeededRNG:
    return SeededRNG(seed)
