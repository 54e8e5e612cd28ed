"""Counter-based random numbers shared by every numba kernel.

All randomness in the package flows from 64-bit keys mixed with the
splitmix64 finalizer.  A vertex of a forest gets its key by hashing the
key of its parent with its child index, so offspring counts never depend
on the order in which vertices are queried.  Walk steps and trial draws
use ``(key, counter)`` pairs.
"""

from __future__ import annotations

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0
_INT_CLAMP = 4.0e18


@nb.njit(cache=True, inline="always")
def fmix(z):
    """splitmix64 output function."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def mix(key, j):
    """Key of child ``j`` of a vertex with key ``key``."""
    return fmix(key ^ fmix(np.uint64(j) * GOLDEN + _ONE))


@nb.njit(cache=True, inline="always")
def to_unit(z):
    """Map 64 random bits to the open interval (0, 1)."""
    return (float(z >> _S11) + 0.5) * _INV53


@nb.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform number ``counter`` of the stream ``key``."""
    return to_unit(fmix(key + (np.uint64(counter) + _ONE) * GOLDEN))


@nb.njit(cache=True, inline="always")
def geometric_count(u, q):
    """Successes before the first failure, failure probability ``q``.

    ``u`` is a uniform on (0, 1).  Result is clamped below 4e18.
    """
    if q >= 1.0:
        return 0
    x = np.floor(np.log(u) / np.log1p(-q))
    if x > _INT_CLAMP:
        x = _INT_CLAMP
    return np.int64(x)


def seed_from(rng) -> np.uint64:
    """Derive a 64-bit stream key from a seed or a numpy Generator."""
    if isinstance(rng, np.random.Generator):
        return np.uint64(rng.integers(0, 2**64, dtype=np.uint64))
    if rng is None:
        return np.uint64(np.random.default_rng().integers(0, 2**64, dtype=np.uint64))
    return np.uint64(int(rng) % 2**64)


@nb.njit(cache=True)
def stream_key(seed, index):
    """Independent key for replica ``index`` of a batch keyed by ``seed``."""
    return mix(fmix(seed + GOLDEN), index)
