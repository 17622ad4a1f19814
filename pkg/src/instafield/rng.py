"""Deterministic counter-based random numbers.

Per-pixel jitter is derived from splitmix64 so that rendering the same pixel
yields the same samples regardless of traversal order or thread count.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray | int) -> np.ndarray:
    """Finalizing mix of splitmix64; maps uint64 -> uint64."""
    with np.errstate(over="ignore"):
        z = (np.asarray(x, dtype=np.uint64) + _GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def pixel_seed(global_seed: int, i, j) -> np.ndarray:
    """Stable per-pixel seed: hash of (global_seed, row, col)."""
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = splitmix64(np.uint64(global_seed & 0xFFFFFFFFFFFFFFFF))
        return splitmix64(h ^ (i << np.uint64(32)) ^ j)


def stratified_offsets(seeds: np.ndarray | int, count: int) -> np.ndarray:
    """Uniform [0,1) offsets, one row of `count` per seed."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    with np.errstate(over="ignore"):
        ctr = seeds[:, None] * np.uint64(0x2545F4914F6CDD1D) + np.arange(
            count, dtype=np.uint64
        )[None, :]
        bits = splitmix64(ctr)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
