"""Seeded counter-based random streams.

Every random draw in the package goes through :func:`stream`, which keys a
Philox generator by ``(seed ^ index, tag)``.  Two streams with different tags
never collide, and a stream's output does not depend on which other streams
were drawn before it, so results are independent of generation order and of
how work is split across threads.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

KERNELS = 1
PATTERNS = 2
SEQUENCE = 3
SIGNAL = 4
KMEANS = 5
PARTITION = 6


def stream(seed: int, index: int = 0, tag: int = 0) -> np.random.Generator:
    key = ((int(seed) ^ int(index)) & _MASK64) | ((int(tag) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def derive(seed: int, *keys: int) -> int:
    """64-bit child seed for a cell identified by integer ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
