"""
Counter-based random streams.

Every consumer draws from a Philox generator keyed by (seed, stream, ...).
The algorithm is fixed so that trajectories are reproducible across runs
and platforms for the same seed.
"""

import enum

import numpy as np


class Stream(enum.IntEnum):
    EPISODE = 1
    RANDOM_CMDP = 2
    LEARNER_INIT = 3
    LIKELIHOOD_POLICY = 4
    TRMC = 5
    MONTE_CARLO = 6
    SEEDS = 7
    SUITE = 8
    TRIPLES = 9


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` on the given stream path."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(sequence))


def derive_seeds(seed: int, count: int, stream: int = Stream.SEEDS) -> list[int]:
    """Independent child seeds for parallel runs, stable in ``seed``."""
    rng = make_rng(seed, stream)
    return [int(x) for x in rng.integers(0, 2**31 - 1, size=count)]


def draw_from_cdf(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from a cumulative row with a uniform ``u``.

    Zero-probability entries are never selected.
    """
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)
