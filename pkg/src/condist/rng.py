"""Deterministic splittable random streams.

Every experiment derives its randomness from a single master seed.
Independent sub-streams are obtained as

    substream(master_seed, *key)  ->  numpy Generator

backed by ``PCG64(SeedSequence(master_seed, spawn_key=key))``.  Streams
with distinct keys are statistically independent and reproducible, so
(M, seed) cells, query batches and tie-break draws can run in any order
(or in parallel) without changing results.
"""

from __future__ import annotations

import numpy as np


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
