"""Seeded random streams. Every stochastic component draws from an :class:`Rng`, and
independent consumers get their own stream via :meth:`Rng.derive` so results do not
depend on the order in which components are built."""
from __future__ import annotations

import zlib
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


class Rng:
    def __init__(self, seed: int, *path):
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, *(_key(p) for p in self.path)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, *path) -> "Rng":
        """Independent child stream keyed by ``path`` (strings or ints)."""
        return Rng(self.seed, *self.path, *path)

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, lo: float, hi: float) -> float:
        return float(self._gen.uniform(lo, hi))

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi)."""
        return int(self._gen.integers(lo, hi))

    def choice(self, items: Sequence[T]) -> T:
        return items[int(self._gen.integers(0, len(items)))]

    def weighted_choice(self, items: Sequence[T], weights: Sequence[float]) -> T:
        w = np.asarray(weights, dtype=np.float64)
        cdf = np.cumsum(w / w.sum())
        i = int(np.searchsorted(cdf, self._gen.random(), side="right"))
        return items[min(i, len(items) - 1)]

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)
