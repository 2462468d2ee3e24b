"""Fan one master seed out into independent, named RNG streams."""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, stream: str) -> int:
    """Seed for sub-stream ``stream`` ("data", "init", "probe", ...)."""
    return splitmix64((int(master) & _MASK) ^ zlib.crc32(stream.encode()))


def stream_rng(master: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, stream))
