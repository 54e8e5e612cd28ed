"""Lazily generated Galton-Watson forests with Ulam-Harris addresses.

A vertex key is a 64-bit hash of the forest seed, the tree index and the
path of child indices.  The offspring count of a vertex is a pure function
of its key, so two forests built from the same ``(law, seed)`` agree on
every vertex whatever the order of queries.  The numba walk kernels use the
same hash chain, which lets a :class:`LazyForest` inspect any vertex a
simulated walk has visited.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numba as nb
import numpy as np

from ._rng import fmix, mix, to_unit
from .heavy_tail import OffspringLaw, draw_offspring

__all__ = ["VertexId", "LazyForest", "offspring_count", "children", "dfs_preorder"]

_NU_SALT = np.uint64(0xD1B54A32D192ED03)


@nb.njit(cache=True, inline="always")
def root_key(seed, tree):
    return mix(fmix(seed ^ _NU_SALT), tree)


@nb.njit(cache=True, inline="always")
def child_key(key, j):
    return mix(key, j)


@nb.njit(cache=True, inline="always")
def vertex_offspring(key, ccdf, kappa, coeff):
    return draw_offspring(to_unit(fmix(key ^ _NU_SALT)), ccdf, kappa, coeff)


@dataclass(frozen=True, order=True)
class VertexId:
    """Vertex ``path`` of tree ``tree`` (trees are numbered from 1).

    The derived ordering is the lexicographic (depth-first) order of the
    forest: trees first, then Ulam-Harris words.
    """

    tree: int
    path: tuple[int, ...] = ()

    @property
    def generation(self) -> int:
        return len(self.path)

    @property
    def is_root(self) -> bool:
        return not self.path

    def parent(self) -> "VertexId":
        if not self.path:
            raise ValueError("a root has no parent")
        return VertexId(self.tree, self.path[:-1])

    def child(self, j: int) -> "VertexId":
        if j < 1:
            raise ValueError("child indices start at 1")
        return VertexId(self.tree, self.path + (j,))

    def is_ancestor_of(self, other: "VertexId") -> bool:
        """Strict ancestry."""
        return (
            self.tree == other.tree
            and len(self.path) < len(other.path)
            and other.path[: len(self.path)] == self.path
        )


@dataclass
class LazyForest:
    """Infinite i.i.d. forest; only queried vertices are materialised."""

    law: OffspringLaw
    seed: int
    memo: dict[VertexId, int] = field(default_factory=dict, repr=False)
    _keys: dict[VertexId, np.uint64] = field(default_factory=dict, repr=False)

    @property
    def key_seed(self) -> np.uint64:
        return np.uint64(int(self.seed) % 2**64)

    def vertex_key(self, u: VertexId) -> np.uint64:
        key = self._keys.get(u)
        if key is not None:
            return key
        if u.is_root:
            key = np.uint64(root_key(self.key_seed, np.uint64(u.tree)))
        else:
            key = np.uint64(child_key(self.vertex_key(u.parent()), np.uint64(u.path[-1])))
        self._keys[u] = key
        return key

    def offspring_count(self, u: VertexId) -> int:
        nu = self.memo.get(u)
        if nu is None:
            law = self.law
            nu = int(vertex_offspring(self.vertex_key(u), law.ccdf, law.kappa, law.tail_coeff))
            self.memo[u] = nu
        return nu

    def children(self, u: VertexId) -> list[VertexId]:
        return [u.child(j) for j in range(1, self.offspring_count(u) + 1)]

    def root(self, i: int) -> VertexId:
        return VertexId(i)


def offspring_count(forest: LazyForest, u: VertexId) -> int:
    """``nu(u)``, drawn once from the per-vertex stream and memoised."""
    return forest.offspring_count(u)


def children(forest: LazyForest, u: VertexId) -> list[VertexId]:
    """Children of ``u`` in index order."""
    return forest.children(u)


def dfs_preorder(
    roots: Iterable[VertexId], kids: Callable[[VertexId], Iterable[VertexId]]
) -> Iterator[VertexId]:
    """Depth-first preorder visiting children in the order ``kids`` lists them."""
    for root in roots:
        stack = [root]
        while stack:
            u = stack.pop()
            yield u
            stack.extend(reversed(list(kids(u))))
