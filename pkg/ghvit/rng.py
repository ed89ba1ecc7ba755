"""Seeded random source used for initialization, shuffling and test inputs.

The generator is numpy's PCG64 seeded through a SeedSequence built from the
64-bit seed and an optional spawn key. PCG64's raw output stream is fixed by
its algorithm, so one seed yields one draw sequence on every platform.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Shape = Union[int, Sequence[int]]

_SEED_LIMIT = 2**64

# top-level fork keys, one per consumer of a run seed
INIT_STREAM = 0
SHUFFLE_STREAM = 1


class Rng:
    def __init__(self, seed: int, spawn_key: Sequence[int] = ()) -> None:
        if not 0 <= int(seed) < _SEED_LIMIT:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def fork(self, *keys: int) -> "Rng":
        """Independent stream for a sub-task (an epoch, a parameter group)."""
        return Rng(self.seed, self.spawn_key + tuple(keys))

    def normal(self, shape: Shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0, dtype=np.float32) -> np.ndarray:
        return self._gen.uniform(low, high, shape).astype(dtype)

    def truncated_normal(self, shape: Shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
        # resample anything outside two standard deviations
        z = self._gen.standard_normal(shape)
        bad = np.abs(z) > 2.0
        while bad.any():
            z[bad] = self._gen.standard_normal(int(bad.sum()))
            bad = np.abs(z) > 2.0
        return (z * std).astype(dtype)

    def integers(self, low: int, high: int, shape: Shape) -> np.ndarray:
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates over range(n), j drawn as raw64 mod (i + 1)."""
        order = np.arange(n, dtype=np.int64)
        if n < 2:
            return order
        draws = self._gen.bit_generator.random_raw(n - 1)
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[step] % np.uint64(i + 1))
            order[i], order[j] = order[j], order[i]
        return order
