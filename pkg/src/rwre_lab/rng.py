"""Counter-based random numbers for reproducible parallel Monte Carlo.

Every Monte Carlo sample ``i`` under a master ``seed`` owns the stream key
``stream_key(seed, i)``.  The ``j``-th uniform of that stream is a pure
function of ``(key, j)``, so results never depend on how samples are split
across workers or in which order they run.

The mixer is the SplitMix64 finaliser; the stream at counter ``j`` is the
SplitMix64 sequence started from ``key``.  The compiled kernels reproduce the
same arithmetic bit for bit.
"""
from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
STREAM_SALT = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, index: int) -> int:
    return mix64(mix64(seed) ^ ((index * GOLDEN + STREAM_SALT) & MASK64))


def draw_u64(key: int, counter: int) -> int:
    return mix64(key + (counter + 1) * GOLDEN)


def uniform(key: int, counter: int) -> float:
    return (draw_u64(key, counter) >> 11) * _INV53


# vectorised twins -----------------------------------------------------------

def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, first: int, n: int) -> np.ndarray:
    """Keys of samples ``first, ..., first + n - 1`` as ``uint64``."""
    idx = np.arange(first, first + n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        salted = idx * np.uint64(GOLDEN) + np.uint64(STREAM_SALT)
        return _mix64_array(np.uint64(mix64(seed)) ^ salted)


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Elementwise ``uniform(keys[i], counters[i])``."""
    with np.errstate(over="ignore"):
        state = keys + (counters.astype(np.uint64) + np.uint64(1)) * np.uint64(GOLDEN)
        return (_mix64_array(state) >> np.uint64(11)).astype(np.float64) * _INV53


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic child seed, e.g. one environment per (seed, replicate)."""
    s = mix64(seed)
    for lab in labels:
        s = mix64(s ^ ((lab * GOLDEN + STREAM_SALT) & MASK64))
    return s


class StreamRNG:
    """Scalar view of one sample stream; used by single-path simulation."""

    def __init__(self, seed: int, index: int = 0):
        self.key = stream_key(seed, index)
        self.counter = 0

    def random(self) -> float:
        u = uniform(self.key, self.counter)
        self.counter += 1
        return u
