"""Seed handling.

All randomness flows through :class:`numpy.random.Generator` (PCG64). Repeats
and sub-tasks get disjoint streams via :meth:`numpy.random.SeedSequence.spawn`,
so results depend only on the root seed and never on scheduling order.
"""
from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        # Draw entropy from the generator so the caller's stream advances.
        return np.random.SeedSequence(seed.integers(0, 2**63, size=4).tolist())
    return np.random.SeedSequence(seed)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(as_seed_sequence(seed))


def spawn(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    """Return ``n`` independent child seed sequences.

    A :class:`~numpy.random.SeedSequence` argument is not mutated: passing the
    same sequence twice yields the same children, exactly as an integer would.
    """
    ss = as_seed_sequence(seed)
    if ss is seed:
        ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key, pool_size=ss.pool_size)
    return ss.spawn(n)
