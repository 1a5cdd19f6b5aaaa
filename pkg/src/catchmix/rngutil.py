"""Reproducible random-number streams.

All stochastic code in this package takes a ``numpy.random.Generator``.
A single master seed is fanned out into named substreams so that, e.g.,
chain 2 of a Gibbs run always sees the same randomness regardless of how
many chains run or in which order they finish.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Derive an independent generator from ``seed`` and a key path.

    String keys are hashed with CRC-32, which is stable across platforms
    and Python versions, so the mapping (seed, keys) -> stream never moves.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            entropy.append(int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
