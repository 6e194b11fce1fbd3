"""Counter-based random streams.

Every source of randomness in the engine is a Philox generator keyed by a
small tuple of integers (seed, stream id, ...), so any draw can be
reproduced bit-exactly without replaying history.
"""

from __future__ import annotations

import numpy as np

_MIX = 0x9E3779B97F4A7C15


def _fold(parts) -> tuple[int, int]:
    """Mix an integer tuple into a 2x64-bit Philox key."""
    k0, k1 = 0x243F6A8885A308D3, 0x13198A2E03707344
    for p in parts:
        v = int(p) & 0xFFFFFFFFFFFFFFFF
        k0 = (k0 ^ v) * _MIX & 0xFFFFFFFFFFFFFFFF
        k0 = (k0 ^ (k0 >> 29)) & 0xFFFFFFFFFFFFFFFF
        k1 = (k1 + v) * _MIX & 0xFFFFFFFFFFFFFFFF
        k1 = (k1 ^ (k1 >> 32)) & 0xFFFFFFFFFFFFFFFF
    return k0, k1


def make_rng(*key: int) -> np.random.Generator:
    """Deterministic generator for the given integer key tuple."""
    return np.random.Generator(np.random.Philox(key=_fold(key)))
