"""Seeded random streams.

Every replica of every ensemble draws from its own stream, derived from a
base seed, a string tag naming the ensemble, and the replica index.  Any
single replica can therefore be reproduced in isolation, and results do
not depend on how replicas are scheduled.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

# keeps uniforms strictly inside (0, 1); inverse normal CDF of 0 is -inf
_OPEN_SHIFT = 2.0**-54


def seed_sequence(rng) -> np.random.SeedSequence:
    """Normalize an int seed, SeedSequence or Generator to a SeedSequence."""
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        ss = rng.bit_generator.seed_seq
        if not isinstance(ss, np.random.SeedSequence):
            raise TypeError("generator was not created from a SeedSequence")
        return ss
    if isinstance(rng, (int, np.integer)):
        if rng < 0:
            raise ValueError("seed must be non-negative")
        return np.random.SeedSequence(int(rng))
    raise TypeError(f"cannot derive a random stream from {type(rng).__name__}")


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive(rng, tag: str, *index: int) -> np.random.SeedSequence:
    ss = seed_sequence(rng)
    key = tuple(ss.spawn_key) + (tag_key(tag),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(ss.entropy, spawn_key=key)


def make_rng(rng, tag: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(base stream, tag, index...)``."""
    return np.random.Generator(np.random.PCG64(derive(rng, tag, *index)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(seed_sequence(rng)))


def open_uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` uniforms in the open interval (0, 1)."""
    return rng.random(n) + _OPEN_SHIFT


def map_replicas(fn: Callable[[int], T], n: int, threads: int = 1) -> list[T]:
    """``[fn(0), ..., fn(n - 1)]``, optionally on a thread pool; order is preserved."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))
