"""Array-based traversal of finite forests given by parent links."""

from __future__ import annotations

import numba as nb
import numpy as np


def children_csr(parent: np.ndarray, key: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Children lists sorted by ``key``.

    Returns ``(roots, offsets, kids)`` where the children of ``v`` are
    ``kids[offsets[v]:offsets[v + 1]]`` and roots are sorted by key.
    """
    n = parent.shape[0]
    order = np.lexsort((key, parent))
    p_sorted = parent[order]
    n_roots = int(np.searchsorted(p_sorted, 0, side="left"))
    roots = order[:n_roots]
    kids = order[n_roots:]
    counts = np.bincount(p_sorted[n_roots:], minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return roots.astype(np.int64), offsets, kids.astype(np.int64)


@nb.njit(cache=True)
def _preorder(roots, offsets, kids, n):
    out = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    pos = 0
    for r in range(roots.shape[0]):
        sp = 0
        stack[sp] = roots[r]
        sp += 1
        while sp > 0:
            sp -= 1
            v = stack[sp]
            out[pos] = v
            pos += 1
            for c in range(offsets[v + 1] - 1, offsets[v] - 1, -1):
                stack[sp] = kids[c]
                sp += 1
    return out[:pos]


def preorder(parent: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Depth-first preorder of a forest; siblings and roots ordered by ``key``."""
    parent = np.asarray(parent, dtype=np.int64)
    roots, offsets, kids = children_csr(parent, np.asarray(key))
    return _preorder(roots, offsets, kids, parent.shape[0])


@nb.njit(cache=True)
def ancestor_sums(parent, weight, creation_order):
    """Sum of ``weight`` along the ancestral line, ``v`` included.

    ``creation_order`` lists vertices so that parents precede children.
    """
    out = np.zeros(parent.shape[0], dtype=np.int64)
    for i in range(creation_order.shape[0]):
        v = creation_order[i]
        p = parent[v]
        out[v] = weight[v] + (out[p] if p >= 0 else 0)
    return out


def topological_order(parent: np.ndarray) -> np.ndarray:
    """Order in which every parent precedes its children."""
    parent = np.asarray(parent, dtype=np.int64)
    if parent.size == 0 or np.all(parent < np.arange(parent.size)):
        return np.arange(parent.size, dtype=np.int64)
    return preorder(parent, np.zeros(parent.size, dtype=np.int64))
