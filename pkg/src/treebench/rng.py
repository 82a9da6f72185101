"""Seeded, named random streams.

Every stochastic stage draws from its own stream derived from
``(seed, name)``, so adding a new consumer never perturbs the draws
seen by existing ones and any stage can be re-run in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``name`` (optionally per-item ``index``)."""
    key = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=(key, int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(seed: int, name: str, index: int = 0) -> int:
    """A 63-bit child seed for APIs that take a plain integer seed."""
    return int(stream(seed, name, index).integers(0, 1 << 63))
