"""Counter-based random streams.

All randomness in the package flows from Philox generators keyed by
(root seed, stream id, extra counters). Streams are independent and
stateless across process runs: the same key always yields the same
sequence, which is what makes training runs and resumed runs bit-identical
without ever serializing generator state.
"""

from __future__ import annotations

import numpy as np

# Stream ids. Keep stable: they are part of the determinism contract.
WEIGHTS = 1
DATA = 2
DEGRADE = 3
REFERENCE = 4
KMEANS = 5
PERCEPTUAL = 6
GRADCHECK = 7


def stream(seed: int, *key: int) -> np.random.Generator:
    """Fresh generator for (seed, *key). Same arguments, same sequence."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
