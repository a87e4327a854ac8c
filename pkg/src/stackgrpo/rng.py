"""Counter-based random streams derived from one master seed.

Every consumer asks for a stream by (purpose, *keys).  The stream depends only
on those values, never on call order or worker scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np


def key_of(value) -> int:
    """Map a stream key component (int or str) to a stable non-negative int."""
    if isinstance(value, (int, np.integer)):
        if value < 0:
            raise ValueError("integer stream keys must be non-negative")
        return int(value)
    return zlib.crc32(str(value).encode())


def stream(seed: int, purpose: str, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key_of(purpose), *(key_of(k) for k in keys)))
    return np.random.Generator(np.random.Philox(ss))
