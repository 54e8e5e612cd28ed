"""Leafed forests with edge lengths built from the local times of a walk.

Vertices of local time 1 (and roots) have type 1, the others type 0.  In
``F^R`` each visited non-root vertex ``v`` hangs below its nearest strict
ancestor ``a`` of type 1, with edge length ``|v| - |a|``; the children of a
type-1 vertex ``u`` are thus the vertices of its optional region ``B^1_u``
and only type-1 vertices have children.

``F^X`` refines ``F^R`` so that vertices match walk times.  Time ``n``
with ``X_n = v`` becomes

* the ``F^R`` copy of ``v`` when ``n`` is the first visit of ``v``;
* a zero-length type-0 child of that copy when ``v`` has type 1;
* a further copy of ``v`` (a sibling with the same length) otherwise.

Siblings are ordered by time.  The walk spends a single time interval in
the subtree of a type-1 vertex, so the depth-first order of ``F^X`` is the
time order and its weighted heights are ``|X_n|``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba as nb
import numpy as np
from numpy.typing import NDArray

from ._trees import ancestor_sums, preorder, topological_order
from .gw_forest import VertexId
from .heavy_tail import hill_estimate
from .walk import MarkedForest, OptionalLineSample, Trajectory

__all__ = [
    "LeafedForest",
    "OptionalLineStats",
    "HlReport",
    "optional_lines",
    "nearest_type1_ancestor",
    "build_FR",
    "build_FX",
    "height_process",
    "forest_height_process",
    "first_generation_data",
    "check_Hl",
    "heights_to_csv",
]


# =============================================================================
# Leafed forests
# =============================================================================


@dataclass
class LeafedForest:
    """Finite multitype forest with integer edge lengths.

    ``parent[v]`` is ``-1`` for roots, ``etype`` is 0 or 1, ``length`` the
    length of the edge above ``v`` and ``key`` orders siblings (and roots).
    ``source`` records the vertex of ``F`` (for ``F^R``) or the walk time
    (for ``F^X``) each vertex comes from.  Parents precede children.
    """

    parent: NDArray[np.int64]
    etype: NDArray[np.int8]
    length: NDArray[np.int64]
    key: NDArray[np.int64]
    source: NDArray[np.int64]

    @property
    def n_vertices(self) -> int:
        return int(self.parent.shape[0])

    @cached_property
    def order(self) -> NDArray[np.int64]:
        """Depth-first order, siblings sorted by ``key``."""
        return preorder(self.parent, self.key)

    @cached_property
    def weighted_depth(self) -> NDArray[np.int64]:
        """Sum of edge lengths from the root, per vertex."""
        return ancestor_sums(self.parent, self.length, topological_order(self.parent))

    @cached_property
    def generation(self) -> NDArray[np.int64]:
        ones = np.ones(self.n_vertices, dtype=np.int64)
        return ancestor_sums(self.parent, ones, topological_order(self.parent)) - 1

    def validate(self, min_length: int = 0) -> None:
        """Check the structural invariants; raise ``ValueError`` on failure."""
        roots = self.parent < 0
        if np.any(self.etype[roots] != 1) or np.any(self.length[roots] != 0):
            raise ValueError("roots must have type 1 and length 0")
        p = self.parent[~roots]
        if np.any(self.etype[p] != 1):
            raise ValueError("a type-0 vertex has children")
        if np.any(self.length[~roots] < min_length):
            raise ValueError(f"non-root edge shorter than {min_length}")

    def to_csv(self, path) -> None:
        """Parent/type/length table in depth-first order."""
        order = self.order
        rank = np.empty(self.n_vertices, dtype=np.int64)
        rank[order] = np.arange(self.n_vertices)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "parent", "type", "length", "source"])
            for v in order:
                p = self.parent[v]
                w.writerow([rank[v], rank[p] if p >= 0 else -1, int(self.etype[v]), int(self.length[v]), int(self.source[v])])


# =============================================================================
# Optional lines
# =============================================================================


@dataclass
class OptionalLineStats:
    """``L^1_u``, ``B^1_u`` and the local-time mass of ``B^1_u``.

    ``L1_list`` holds vertex indices of the frontier, in depth-first order.
    """

    L1: int
    B1: int
    B1_beta_sum: int
    L1_list: list[int] = field(default_factory=list)


def _children_lists(marked: MarkedForest) -> list[list[int]]:
    kids: list[list[int]] = [[] for _ in range(marked.n_vertices)]
    for v in np.argsort(marked.child_index, kind="stable"):
        p = marked.parent[v]
        if p >= 0:
            kids[p].append(int(v))
    return kids


def optional_lines(marked: MarkedForest, u) -> OptionalLineStats:
    """Optional line below ``u`` (a vertex index or a :class:`VertexId`).

    ``B^1_u`` holds the descendants ``v`` of ``u`` with positive local time
    and no vertex of local time 1 strictly between ``u`` and ``v``;
    ``L^1_u`` is its subset of local time 1.
    """
    if isinstance(u, VertexId):
        u = marked.index_of(u)
    if marked.beta[u] < 1:
        raise ValueError("u must have positive local time")
    kids = _children_lists(marked)
    L1_list: list[int] = []
    B1 = 0
    bsum = 0
    stack = list(reversed(kids[u]))
    while stack:
        v = stack.pop()
        b = int(marked.beta[v])
        if b == 0:
            continue
        B1 += 1
        bsum += b
        if b == 1:
            L1_list.append(v)
        else:
            stack.extend(reversed(kids[v]))
    return OptionalLineStats(len(L1_list), B1, bsum, L1_list)


@nb.njit(cache=True)
def _anc1(parent, beta):
    out = np.full(parent.shape[0], -1, dtype=np.int64)
    for v in range(parent.shape[0]):
        p = parent[v]
        if p < 0:
            continue
        if beta[p] == 1 or parent[p] < 0:
            out[v] = p
        else:
            out[v] = out[p]
    return out


def nearest_type1_ancestor(marked: MarkedForest) -> NDArray[np.int64]:
    """Nearest strict ancestor with local time 1 (roots count), ``-1`` for roots."""
    return _anc1(marked.parent, marked.beta)


# =============================================================================
# F^R and F^X
# =============================================================================


def build_FR(marked: MarkedForest) -> LeafedForest:
    """The reduction ``F^R`` of a marked forest.

    Vertices of zero local time are dropped.  Siblings keep the
    lexicographic order of ``F``.
    """
    keep = (marked.beta >= 1) | (marked.parent < 0)
    if not keep.all():
        marked = marked.restrict(keep)
    anc = nearest_type1_ancestor(marked)
    n = marked.n_vertices
    rank = np.empty(n, dtype=np.int64)
    rank[marked.lex_order] = np.arange(n)
    roots = marked.parent < 0
    etype = np.where(roots | (marked.beta == 1), 1, 0).astype(np.int8)
    length = np.where(roots, 0, marked.depth - marked.depth[np.maximum(anc, 0)])
    return LeafedForest(anc, etype, length.astype(np.int64), rank, np.arange(n, dtype=np.int64))


@nb.njit(cache=True)
def _fx_arrays(pos, parent, depth, beta, first, anc):
    n = pos.shape[0]
    fp = np.empty(n, dtype=np.int64)
    et = np.zeros(n, dtype=np.int8)
    ln = np.zeros(n, dtype=np.int64)
    for t in range(n):
        v = pos[t]
        root = parent[v] < 0
        type1 = root or beta[v] == 1
        if t == first[v]:
            if root:
                fp[t] = -1
                et[t] = 1
            else:
                a = anc[v]
                fp[t] = first[a]
                et[t] = 1 if type1 else 0
                ln[t] = depth[v] - depth[a]
        elif type1:
            fp[t] = first[v]
        else:
            a = anc[v]
            fp[t] = first[a]
            ln[t] = depth[v] - depth[a]
    return fp, et, ln


def build_FX(traj: Trajectory, complete_only: bool = False) -> LeafedForest:
    """The reduction ``F^X``: one vertex per walk time ``0..n``.

    Vertex ``t`` is the vertex built from time ``t``.  With
    ``complete_only`` the times spent in the tree under exploration at the
    last step are dropped.
    """
    marked = traj.marked_forest()
    anc = nearest_type1_ancestor(marked)
    pos = traj.pos
    if complete_only:
        pos = pos[: int(traj.first_visit[_root_of(traj.parent, pos[-1])])]
    fp, et, ln = _fx_arrays(pos, traj.parent, traj.depth, traj.beta_array, traj.first_visit, anc)
    times = np.arange(pos.shape[0], dtype=np.int64)
    return LeafedForest(fp, et, ln, times, times)


def _root_of(parent: NDArray[np.int64], v: int) -> int:
    while parent[v] >= 0:
        v = parent[v]
    return int(v)


# =============================================================================
# Height processes
# =============================================================================


def height_process(F: LeafedForest, mode: str = "weighted") -> NDArray[np.int64]:
    """Height process in depth-first order.

    ``weighted``: sum of edge lengths along the ancestral line, one entry
    per vertex.  ``type1``: generation within the type-1 subforest, one
    entry per type-1 vertex.
    """
    order = F.order
    if mode == "weighted":
        return F.weighted_depth[order]
    if mode == "type1":
        order = order[F.etype[order] == 1]
        return F.generation[order]
    raise ValueError(f"unknown mode {mode!r}")


def forest_height_process(marked: MarkedForest) -> NDArray[np.int64]:
    """Generations of the vertices of a marked forest in lexicographic order."""
    return marked.depth[marked.lex_order]


def heights_to_csv(heights, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "height"])
        w.writerows(enumerate(np.asarray(heights).tolist()))


# =============================================================================
# Hypothesis checks on first-generation data
# =============================================================================


def first_generation_data(F: LeafedForest, r: float = 1.1) -> dict[str, NDArray]:
    """Per type-1 vertex: type-1 children, all children, ``sum r^l`` and ``sum l`` over type-1 children."""
    n = F.n_vertices
    nonroot = F.parent >= 0
    p = F.parent[nonroot]
    t1 = F.etype[nonroot] == 1
    lens = F.length[nonroot]
    nu1 = np.bincount(p[t1], minlength=n)
    nu = np.bincount(p, minlength=n)
    rsum = np.bincount(p, weights=float(r) ** lens, minlength=n)
    lsum = np.bincount(p[t1], weights=lens[t1], minlength=n)
    sel = F.etype == 1
    return {"nu1": nu1[sel], "nu": nu[sel], "r_sum": rsum[sel], "length_sum": lsum[sel]}


@dataclass
class HlReport:
    """Monte Carlo view of the leafed-forest hypotheses.

    Each estimate is paired with its standard error.
    """

    n: int
    mean_nu1: float
    mean_nu1_se: float
    moment_1eps: float
    moment_1eps_se: float
    eps: float
    tail_index: float
    tail_index_se: float
    tail_const: float
    mean_r_sum: float
    mean_r_sum_se: float
    r: float
    mu: float
    mu_se: float
    n_capped: int = 0

    def to_record(self) -> dict:
        return dict(self.__dict__)


def _mean_se(x: NDArray) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def check_Hl(samples, eps: float = 0.25, r: float = 1.1, k: int | None = None) -> HlReport:
    """Estimates for ``E[nu^1]``, ``E[nu^(1+eps)]``, the tail of ``nu^1``,
    ``E[sum r^l]`` and ``mu = E[sum of type-1 lengths]``.

    ``samples`` is an :class:`OptionalLineSample` of root type 1 (capped
    replicas are dropped and counted) or a dict from
    :func:`first_generation_data`.
    """
    n_capped = 0
    if isinstance(samples, OptionalLineSample):
        n_capped = samples.n_capped
        s = samples.valid()
        if s.r != r:
            raise ValueError(f"samples were drawn with r = {s.r}, not {r}")
        data = {"nu1": s.L1, "nu": s.B1, "r_sum": s.r_sum, "length_sum": s.length_sum}
    else:
        data = samples
    nu1 = np.asarray(data["nu1"])
    m1, s1 = _mean_se(nu1)
    me, se_ = _mean_se(np.asarray(data["nu"], dtype=np.float64) ** (1.0 + eps))
    hill = hill_estimate(nu1, k)
    mr, sr = _mean_se(data["r_sum"])
    mu, smu = _mean_se(data["length_sum"])
    return HlReport(
        int(nu1.size), m1, s1, me, se_, float(eps), hill.index_hat, hill.std_err, hill.const_hat,
        mr, sr, float(r), mu, smu, n_capped,
    )
