"""
Counter-based random streams keyed by (seed, index).

A replicate's generator depends only on the run seed and the replicate
number, so replicates can run in any order or process.
"""

import numpy as np


def replicate_rng(seed: int, index: int, *stream: int) -> np.random.Generator:
    """Philox generator for replicate ``index``; extra ints select sub-streams"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index, *stream])))


def seed_entropy(seed: int) -> int:
    """Validate a user seed as a non-negative 64-bit integer"""
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must be in [0, 2^64), got {seed}")
    return seed
