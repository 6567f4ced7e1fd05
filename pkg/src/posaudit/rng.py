"""Seeded random streams.

Every random draw in the package comes from numpy's PCG64 bit generator
seeded through ``SeedSequence(entropy=seed, spawn_key=key)``. PCG64 and
SeedSequence are specified bit-for-bit and produce the same output on every
platform, so each ``(seed, key)`` pair names one reproducible stream.
Independent work items (trees, bootstrap replicates, simulation replicates)
each get their own key, which makes results independent of execution order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# first element of the spawn key, one per consumer
FOREST = 1
BOOTSTRAP = 2
SAMPLE = 3
STUDY = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
