"""Seeded random streams.

Every stochastic choice in the package (initialization, shuffling, latent
draws, noise) is pulled from an :class:`RngStream` so that a fixed seed
reproduces a run bit for bit.  The stream wraps numpy's PCG64 generator;
torch's global RNG is never used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "pcg64"


@dataclass
class RngStream:
    """A named, seeded source of randomness.

    Parameters
    ----------
    seed : int
        64-bit seed.  Identical seeds give identical draw sequences on
        every platform numpy supports.
    """

    seed: int
    algorithm: str = ALGORITHM
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm: {self.algorithm!r}")
        seq = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on [0, 1)."""
        return self._gen.uniform(0.0, 1.0, size=size)

    def normal(self, sigma: float = 1.0, size=None) -> np.ndarray | float:
        """Zero-mean Gaussian draws with standard deviation ``sigma``."""
        return self._gen.normal(0.0, sigma, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def derive(self, index: int) -> "RngStream":
        """Independent child stream, deterministic in (seed, index).

        Used to hand isolated streams to sub-tasks (per-seed experiment
        repeats, noise injection) without perturbing the parent's state.
        """
        child_seq = np.random.SeedSequence(
            int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(index),)
        )
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.algorithm = self.algorithm
        child._gen = np.random.Generator(np.random.PCG64(child_seq))
        return child
