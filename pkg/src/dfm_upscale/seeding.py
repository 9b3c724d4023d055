"""Deterministic, splittable random streams.

Every stochastic stage derives its generator from (master_seed, purpose tag,
index) so that independent stages never share a stream and parallel workers
can reproduce any single item in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np

_U64 = (1 << 64) - 1


def substream(master_seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, tag, index) triple."""
    key = zlib.crc32(tag.encode("utf8"))
    ss = np.random.SeedSequence(int(master_seed) & _U64, spawn_key=(key, int(index)))
    return np.random.Generator(np.random.Philox(ss))
