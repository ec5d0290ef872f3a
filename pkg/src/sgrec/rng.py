"""Deterministic, language-neutral pseudo-random streams for weight init.

Every learnable tensor gets its own SplitMix64 stream derived from a user
seed and the tensor's manifest name, so adding or removing tensors never
shifts the values of the others.
"""

from __future__ import annotations

import numpy as np

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x00000100000001B3


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def derive_seed(seed: int, name: str) -> int:
    """Per-tensor stream seed: user seed mixed with the tensor name."""
    return (seed ^ fnv1a64(name)) & 0xFFFFFFFFFFFFFFFF


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of SplitMix64 seeded with `seed`, as uint64.

    Uses the closed form state_i = seed + i*golden (mod 2^64), so the whole
    stream vectorizes; identical to advancing the scalar generator.
    """
    idx = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _GOLDEN) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _MASK64
        z = z ^ (z >> np.uint64(31))
    return z


def uniform(seed: int, shape: tuple[int, ...], low: float, high: float) -> np.ndarray:
    """Deterministic uniform [low, high) array driven by SplitMix64."""
    n = int(np.prod(shape)) if shape else 1
    u = splitmix64(seed, n).astype(np.float64) * 2.0**-64
    return (low + (high - low) * u).reshape(shape)


def init_uniform(seed: int, name: str, shape: tuple[int, ...], scale: float) -> np.ndarray:
    """Named-stream uniform(-scale, scale) initializer."""
    return uniform(derive_seed(seed, name), shape, -scale, scale)
