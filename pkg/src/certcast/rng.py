"""Seeded random streams.

Uniform variates come from PCG64; normal variates are built from pairs of
uniforms with the Box-Muller transform so that a stream is fully determined
by its seed and the sequence of draws.
"""
from __future__ import annotations

import zlib

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & (2**64 - 1)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.counter = 0

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = self._gen.random(size)
        self.counter += int(np.size(out))
        return low + (high - low) * out

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        # 1 - U lies in (0, 1], so the log is finite
        u1 = 1.0 - self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        z = mean + std * z
        return float(z[0]) if not shape else z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniforms keeps the permutation a pure function of the stream
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        u = self.uniform(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def spawn(self, key) -> "Rng":
        """Independent child stream keyed by ``key`` (str or int)."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode())
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, int(key)])
        return Rng(int(seq.generate_state(2, dtype=np.uint64)[0]))
