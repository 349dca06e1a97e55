"""Deterministic, hierarchically splittable random streams.

A stream is addressed by a root seed plus an integer path, e.g.
``Seed(7, (3, 12))`` for trial 3, optimization step 12. Streams with distinct
paths are statistically independent; the same address always yields the same
bits (PCG64 seeded through ``SeedSequence``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Seed:
    root: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.root) < 2**64:
            raise ValueError("root seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "root", int(self.root))
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    def child(self, *path: int) -> "Seed":
        return Seed(self.root, self.stream + tuple(path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.root, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def as_seed(seed) -> Seed:
    if isinstance(seed, Seed):
        return seed
    return Seed(int(seed))


def draw_standard_normal(seed, shape) -> np.ndarray:
    return as_seed(seed).generator().standard_normal(shape)


def draw_uniform(seed, shape, low=0.0, high=1.0) -> np.ndarray:
    return as_seed(seed).generator().uniform(low, high, shape)
