"""Seeded random streams.

Every random draw in the package comes from ``numpy.random.Generator`` on the
counter-based Philox bit generator.  Independent streams (replications, sweep
cells, Monte Carlo batches) are derived from the base seed with a spawn key,
so ``make_rng(seed, 3)`` is the same stream on every platform and never
overlaps ``make_rng(seed, 4)``.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int | None, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
