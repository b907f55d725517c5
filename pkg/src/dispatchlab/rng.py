"""Seeded, index-addressed random streams for reproducible ensembles."""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the counter-based random stream addressed by ``(seed, *key)``.

    Streams with distinct addresses are statistically independent and
    bit-stable across platforms and processes, so replications keyed by run
    index can execute in any order and still aggregate identically.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
