"""Deterministic random-stream derivation.

Every source of randomness in this package is a numpy Generator derived
from a master seed plus an integer key path. Derivation is stateless, so
identical seeds yield identical streams no matter in which order (or in
which worker process) the streams are consumed.
"""

from __future__ import annotations

import numpy as np

Rng = np.random.Generator

# Stream namespaces. Keeping these distinct guarantees that, e.g., the
# session generator and the allocation sampler never share a stream even
# when given the same master seed.
STREAM_SESSIONS = 1
STREAM_ALLOCATION = 2
STREAM_DESIGN = 3
STREAM_REPLICATION = 4
STREAM_VERIFY = 5
STREAM_SWEEP = 6

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


def derive_rng(master_seed: int, *key: int) -> Rng:
    """Child generator for ``(master_seed, *key)``.

    The key path is folded into the seed sequence's spawn key, so streams
    for different keys are statistically independent and reproducible
    regardless of creation order.
    """
    spawn = tuple(int(k) & _MASK32 for k in key)
    seq = np.random.SeedSequence(int(master_seed) & _MASK64, spawn_key=spawn)
    return np.random.default_rng(seq)
