"""Named random streams derived from a master seed.

``stream(seed, "task", 3, "data")`` always yields the same generator, and
distinct key paths give statistically independent streams, so any piece of
work can be recomputed in isolation.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def seed_sequence(seed, *keys) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(_key(k) for k in keys)
        )
    return np.random.SeedSequence(_key(seed), spawn_key=tuple(_key(k) for k in keys))


def stream(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng(0)
    return stream(seed)


def derive_int(seed, *keys) -> int:
    """A 63-bit integer seed for APIs that only take ints."""
    hi, lo = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & ((1 << 63) - 1)
