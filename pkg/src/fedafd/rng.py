"""Partitioned random streams.

Every consumer derives its own generator from the master seed plus a tuple of
keys such as ``("client", 3, "round", 7, "baa")``. Streams never share state,
so switching one component off cannot shift the draws of another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)]))
