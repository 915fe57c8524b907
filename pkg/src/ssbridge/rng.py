"""Counter-based random streams.

Every stochastic consumer gets a Philox generator keyed by a root seed and a
tuple of integers naming its role, so streams never depend on call order.
"""
from __future__ import annotations

import numpy as np

# stream namespaces; values are part of the on-disk determinism contract
TRAIN = 1
SAMPLE = 2
IMAGE = 3
EXPERT = 4
INIT = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
