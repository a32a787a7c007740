"""Counter-based random substreams.

Every random quantity in the lab is drawn from a Philox stream keyed by
``(seed, purpose, index)``.  Because the key depends only on the particle
index, an ensemble of ``n`` particles and an ensemble of ``4n`` particles built
from the same seed share their first ``n`` drivers exactly, which is what the
coupled n-ladders rely on.
"""

from __future__ import annotations

import numpy as np

# stream purposes
BROWNIAN = 0
INITIAL = 1
BRIDGE = 2
AUX = 3

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed, e.g. for replica ``r`` of a study."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream_key(seed: int, purpose: int, index: int) -> tuple[int, int, int]:
    """Substream identifier: a pure function of (seed, purpose, index)."""
    return (int(seed) & _MASK64, int(purpose), int(index))


def stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    entropy, purpose, index = stream_key(seed, purpose, index)
    ss = np.random.SeedSequence(entropy=entropy, spawn_key=(purpose, index))
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, purpose: int, count: int, shape: tuple[int, ...], start: int = 0) -> np.ndarray:
    """Stack ``shape``-sized standard normal draws from streams ``start..start+count-1``.

    Returns an array of shape ``(count, *shape)``; row ``i`` depends only on
    ``(seed, purpose, start + i)``.
    """
    out = np.empty((count, *shape))
    for i in range(count):
        out[i] = stream(seed, purpose, start + i).standard_normal(shape)
    return out
