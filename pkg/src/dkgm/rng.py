"""Deterministic stream splitting from one 64-bit master seed.

Stream ``i`` is seeded with ``splitmix64(master + (i + 1) * GOLDEN)`` (mod
2**64).  For a fixed master the map ``i -> master + (i + 1) * GOLDEN`` is
injective because ``GOLDEN`` is odd, and the splitmix64 finaliser is a
bijection, so distinct indices always give distinct seeds.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

__all__ = ["splitmix64", "stream_seed", "stream", "STREAMS"]

# named stream indices used by the experiment runner
STREAMS = {
    "data": 0,
    "init": 1,
    "train": 2,
    "eval": 3,
    "stage1_init": 4,
    "stage1_train": 5,
    "sampler_init": 6,
    "sampler_train": 7,
    "sampling": 8,
    "sde": 9,
    "sa": 10,
}


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(master: int, index: int) -> int:
    if not 0 <= master <= MASK64:
        raise ValueError("master seed must be a 64-bit unsigned integer")
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    return splitmix64((master + (index + 1) * GOLDEN) & MASK64)


def stream(master: int, index: int | str) -> np.random.Generator:
    if isinstance(index, str):
        index = STREAMS[index]
    return np.random.default_rng(stream_seed(master, index))
