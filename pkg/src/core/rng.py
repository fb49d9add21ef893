"""
Reproducible random streams.

Every stream is numpy's Philox4x64-10 counter-based bit generator keyed by a
``SeedSequence`` built from ``(seed, *path)``. Philox output depends only on
the key and the counter, so identical seeds give identical streams on every
platform. Child streams are derived with :meth:`Rng.spawn`, which appends to
the path instead of advancing the parent, so the order in which independent
tasks draw numbers never changes what they draw.
"""

from typing import Sequence, Tuple, Union

import numpy as np

Shape = Union[int, Tuple[int, ...]]


class Rng:
    """
    Seeded random generator.

    Attributes:
        seed (int): Root seed (u64).
        path (Tuple[int, ...]): Spawn path below the root.
    """

    ALGORITHM = "philox4x64-10/seedsequence"

    def __init__(self, seed: int, path: Sequence[int] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a u64, got {seed}")
        self.seed = int(seed)
        self.path: Tuple[int, ...] = tuple(int(p) for p in path)
        entropy = [self.seed, *self.path]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def spawn(self, *keys: int) -> "Rng":
        """Return an independent child stream identified by ``keys``."""
        return Rng(self.seed, self.path + tuple(keys))

    def normal(self, shape: Shape) -> np.ndarray:
        """Standard normal float32 samples."""
        return self._gen.standard_normal(shape, dtype=np.float32)

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform float32 samples in ``[low, high)``."""
        u = self._gen.random(shape, dtype=np.float32)
        return (low + (high - low) * u).astype(np.float32)

    def integers(self, low: int, high: int, size: Shape = None):
        """Integers in ``[low, high)``."""
        return self._gen.integers(low, high, size=size)

    def random(self) -> float:
        """A single float in ``[0, 1)``."""
        return float(self._gen.random())

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        """Indices drawn from ``range(n)``."""
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def next_seed(self) -> int:
        """Draw a fresh u64 seed from this stream."""
        return int(self._gen.integers(0, 2**63 - 1))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
