"""Open-addressing map ``(parent id, child index) -> vertex id`` for numba.

Slots are valid when their stamp equals the caller's current stamp, so a
table can be reused across replicas without clearing it.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from ._rng import GOLDEN, fmix


def table_size(n_items: int) -> int:
    """Power of two giving load factor at most one half."""
    size = 16
    while size < 2 * n_items:
        size *= 2
    return size


def new_table(size: int):
    return (
        np.zeros(size, dtype=np.int64),
        np.zeros(size, dtype=np.int64),
        np.zeros(size, dtype=np.int64),
        np.zeros(size, dtype=np.int64),
    )


@nb.njit(cache=True, inline="always")
def _slot(parent, j, mask):
    return np.int64(fmix(np.uint64(parent) * GOLDEN + np.uint64(j)) & np.uint64(mask))


@nb.njit(cache=True)
def find(hp, hc, hs, stamp, parent, j):
    """Return ``(slot, found)``; an unfound key's slot is where to insert it."""
    mask = hp.shape[0] - 1
    s = _slot(parent, j, mask)
    while hs[s] == stamp:
        if hp[s] == parent and hc[s] == j:
            return s, True
        s = (s + 1) & mask
    return s, False


@nb.njit(cache=True)
def grow(hp, hc, hv, hs, stamp):
    """Double the table, keeping only entries carrying ``stamp``."""
    size = hp.shape[0] * 2
    np_ = np.zeros(size, dtype=np.int64)
    nc = np.zeros(size, dtype=np.int64)
    nv = np.zeros(size, dtype=np.int64)
    ns = np.zeros(size, dtype=np.int64)
    for s in range(hp.shape[0]):
        if hs[s] == stamp:
            t, _ = find(np_, nc, ns, stamp, hp[s], hc[s])
            np_[t] = hp[s]
            nc[t] = hc[s]
            nv[t] = hv[s]
            ns[t] = stamp
    return np_, nc, nv, ns
