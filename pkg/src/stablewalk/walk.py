"""The critical biased walk on a Galton-Watson forest and its local times.

From a vertex ``u`` with ``nu(u)`` children the walk moves to the parent
with probability ``m / (m + nu(u))`` and to each child with probability
``1 / (m + nu(u))``.  Stepping up from the root of tree ``i`` moves to the
root of tree ``i + 1``.  The edge local time ``beta(u)`` counts downward
crossings of the edge into ``u``.

Two samplers produce local times.  :func:`run_walk` follows the walk step
by step on a lazy forest.  The trial samplers draw the local times of the
children of a vertex entered ``k`` times directly: every stay at the
vertex ends either in a failure (a step up, probability ``m / (m + nu)``)
or in a success (a step into a uniformly chosen child), and the vertex is
left for good at the ``k``-th failure.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba as nb
import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln

from . import _hashmap as hm
from ._rng import geometric_count, seed_from, stream_key, uniform
from ._trees import preorder
from .gw_forest import LazyForest, VertexId, child_key, root_key, vertex_offspring
from .heavy_tail import OffspringLaw, draw_offspring

__all__ = [
    "Trajectory",
    "MarkedForest",
    "CapExceeded",
    "run_walk",
    "step_choice",
    "walk_heights_batch",
    "sample_children_local_times",
    "negative_multinomial_pmf",
    "excursion_beta_tree",
    "sample_optional_line",
    "OptionalLineSample",
    "mean_matrix_mc",
    "beta_generation_sums",
    "beta_tree_paths",
    "gw_generation_sizes",
]


class CapExceeded(RuntimeError):
    """A size or depth cap was hit; ``partial`` holds what was built."""

    def __init__(self, reason: str, partial=None):
        super().__init__(reason)
        self.reason = reason
        self.partial = partial


# =============================================================================
# Marked forests
# =============================================================================


@dataclass
class MarkedForest:
    """Finite forest with edge local times.

    Vertex ``v`` has parent ``parent[v]`` (``-1`` for roots), Ulam-Harris
    child index ``child_index[v]``, generation ``depth[v]``, tree number
    ``tree[v]``, local time ``beta[v]`` and offspring count ``nu[v]``
    (``-1`` when never sampled).  Parents precede children in the arrays.
    """

    parent: NDArray[np.int64]
    child_index: NDArray[np.int64]
    depth: NDArray[np.int64]
    beta: NDArray[np.int64]
    nu: NDArray[np.int64]
    tree: NDArray[np.int64] = None

    def __post_init__(self) -> None:
        if self.tree is None:
            self.tree = np.ones_like(self.parent)

    @property
    def n_vertices(self) -> int:
        return int(self.parent.shape[0])

    @cached_property
    def lex_order(self) -> NDArray[np.int64]:
        """Vertices in depth-first lexicographic order."""
        key = np.where(self.parent < 0, self.tree, self.child_index)
        return preorder(self.parent, key)

    def vertex_id(self, v: int) -> VertexId:
        path = []
        while self.parent[v] >= 0:
            path.append(int(self.child_index[v]))
            v = self.parent[v]
        return VertexId(int(self.tree[v]), tuple(reversed(path)))

    def index_of(self, u: VertexId) -> int:
        """Array index of ``u`` (linear scan, for small forests)."""
        for v in range(self.n_vertices):
            if self.depth[v] == u.generation and self.tree[v] == u.tree and self.vertex_id(v) == u:
                return v
        raise KeyError(u)

    def restrict(self, keep: NDArray[np.bool_]) -> "MarkedForest":
        """Sub-forest on an ancestor-closed vertex set."""
        idx = np.flatnonzero(keep)
        remap = -np.ones(self.n_vertices + 1, dtype=np.int64)
        remap[idx] = np.arange(idx.size)
        par = self.parent[idx]
        return MarkedForest(
            remap[np.where(par < 0, self.n_vertices, par)],
            self.child_index[idx],
            self.depth[idx],
            self.beta[idx],
            self.nu[idx],
            self.tree[idx],
        )

    @classmethod
    def from_spec(cls, spec: dict[tuple[int, ...], int], tree: int = 1) -> "MarkedForest":
        """Build a single tree from ``{path: beta}``; the root path is ``()``."""
        paths = sorted(spec, key=lambda p: (len(p), p))
        index = {p: i for i, p in enumerate(paths)}
        parent = np.array([index[p[:-1]] if p else -1 for p in paths], dtype=np.int64)
        cidx = np.array([p[-1] if p else 0 for p in paths], dtype=np.int64)
        depth = np.array([len(p) for p in paths], dtype=np.int64)
        beta = np.array([spec[p] for p in paths], dtype=np.int64)
        nu = -np.ones(len(paths), dtype=np.int64)
        return cls(parent, cidx, depth, beta, nu, np.full(len(paths), tree, dtype=np.int64))


MarkedTree = MarkedForest


# =============================================================================
# Step-by-step walk
# =============================================================================


@nb.njit(cache=True, inline="always")
def step_choice(u, nu, m):
    """Map a uniform ``u`` to 0 (step up) or a child index in ``1..nu``."""
    p_up = m / (m + nu)
    if u < p_up:
        return 0
    j = 1 + np.int64((u - p_up) * (m + nu))
    return j if j <= nu else nu


@nb.njit(cache=True)
def _forest_walk(n_steps, m, forest_seed, walk_key, ccdf, kappa, coeff):
    cap = n_steps + 2
    parent = np.empty(cap, dtype=np.int64)
    cidx = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    tree = np.empty(cap, dtype=np.int64)
    nu = np.empty(cap, dtype=np.int64)
    beta = np.empty(cap, dtype=np.int64)
    first = np.empty(cap, dtype=np.int64)
    keys = np.empty(cap, dtype=np.uint64)
    size = 16
    while size < 2 * cap:
        size *= 2
    hp = np.zeros(size, dtype=np.int64)
    hc = np.zeros(size, dtype=np.int64)
    hv = np.zeros(size, dtype=np.int64)
    hs = np.zeros(size, dtype=np.int64)
    pos = np.empty(n_steps + 1, dtype=np.int64)

    keys[0] = root_key(forest_seed, np.uint64(1))
    parent[0] = -1
    cidx[0] = 0
    depth[0] = 0
    tree[0] = 1
    nu[0] = vertex_offspring(keys[0], ccdf, kappa, coeff)
    beta[0] = 1
    first[0] = 0
    nv = 1
    cur = 0
    pos[0] = 0
    for t in range(n_steps):
        j = step_choice(uniform(walk_key, t), nu[cur], m)
        if j == 0:
            p = parent[cur]
            if p >= 0:
                cur = p
            else:
                v = nv
                nv += 1
                tree[v] = tree[cur] + 1
                keys[v] = root_key(forest_seed, np.uint64(tree[v]))
                parent[v] = -1
                cidx[v] = 0
                depth[v] = 0
                nu[v] = vertex_offspring(keys[v], ccdf, kappa, coeff)
                beta[v] = 1
                first[v] = t + 1
                cur = v
        else:
            s, found = hm.find(hp, hc, hs, 1, cur, j)
            if found:
                v = hv[s]
            else:
                v = nv
                nv += 1
                hp[s] = cur
                hc[s] = j
                hv[s] = v
                hs[s] = 1
                keys[v] = child_key(keys[cur], np.uint64(j))
                parent[v] = cur
                cidx[v] = j
                depth[v] = depth[cur] + 1
                tree[v] = tree[cur]
                nu[v] = vertex_offspring(keys[v], ccdf, kappa, coeff)
                beta[v] = 0
                first[v] = t + 1
            beta[v] += 1
            cur = v
        pos[t + 1] = cur
    return pos, parent[:nv], cidx[:nv], depth[:nv], tree[:nv], nu[:nv], beta[:nv], first[:nv]


@dataclass
class Trajectory:
    """A walk path together with the visited part of the forest.

    ``pos[k]`` is the index of ``X_k`` in the vertex arrays.  Vertex
    arrays follow :class:`MarkedForest` conventions and add the step of
    first visit.
    """

    forest: LazyForest
    m: float
    pos: NDArray[np.int64]
    parent: NDArray[np.int64]
    child_index: NDArray[np.int64]
    depth: NDArray[np.int64]
    tree: NDArray[np.int64]
    nu: NDArray[np.int64]
    beta_array: NDArray[np.int64]
    first_visit: NDArray[np.int64]
    _ids: list = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return int(self.pos.shape[0] - 1)

    @property
    def n_vertices(self) -> int:
        return int(self.parent.shape[0])

    @cached_property
    def heights(self) -> NDArray[np.int64]:
        return self.depth[self.pos]

    @property
    def current_tree(self) -> int:
        return int(self.tree[self.pos[-1]])

    # --- Ulam-Harris views (built on demand) -----------------------------

    def vertex_ids(self) -> list[VertexId]:
        if self._ids is None:
            ids: list[VertexId] = []
            for v in range(self.n_vertices):
                p = self.parent[v]
                if p < 0:
                    ids.append(VertexId(int(self.tree[v])))
                else:
                    ids.append(ids[p].child(int(self.child_index[v])))
            self._ids = ids
        return self._ids

    @property
    def positions(self) -> list[VertexId]:
        ids = self.vertex_ids()
        return [ids[v] for v in self.pos]

    @property
    def beta(self) -> dict[VertexId, int]:
        ids = self.vertex_ids()
        return {ids[v]: int(self.beta_array[v]) for v in range(self.n_vertices)}

    @property
    def trace(self) -> set[VertexId]:
        return set(self.vertex_ids())

    # --- derived structures ----------------------------------------------

    def marked_forest(self, complete_only: bool = False) -> MarkedForest:
        """The visited forest with its local times.

        With ``complete_only`` the tree still being explored at the final
        step is dropped.
        """
        mf = MarkedForest(self.parent, self.child_index, self.depth, self.beta_array, self.nu, self.tree)
        if complete_only:
            return mf.restrict(self.tree < self.current_tree)
        return mf

    # --- export ----------------------------------------------------------

    def heights_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "height"])
            w.writerows(zip(range(self.n_steps + 1), self.heights.tolist()))

    def heights_to_binary(self, path) -> None:
        """Heights as a ``.npy`` int64 column."""
        np.save(Path(path), self.heights)


def run_walk(forest: LazyForest, n_steps: int, rng=None) -> Trajectory:
    """Run ``n_steps`` of the walk from the root of tree 1.

    Offspring counts are those of ``forest``; ``rng`` drives the steps.
    """
    law = forest.law
    if not law.mean_is_finite or law.mean <= 0:
        raise ValueError("the walk needs a law with finite positive mean")
    out = _forest_walk(
        int(n_steps), float(law.mean), forest.key_seed, seed_from(rng),
        law.ccdf, law.kappa, law.tail_coeff,
    )
    return Trajectory(forest, float(law.mean), *out)


# =============================================================================
# Batched heights for scaling experiments
# =============================================================================


@nb.njit(cache=True)
def _walk_heights_batch(n_steps, m, seed, first_replica, replicas, checkpoints, ccdf, kappa, coeff):
    nc = checkpoints.shape[0]
    out_h = np.zeros((replicas, nc), dtype=np.int64)
    out_max = np.zeros((replicas, nc), dtype=np.int64)
    out_root = np.zeros((replicas, nc), dtype=np.int64)
    cap = n_steps + 2
    parent = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    tree = np.empty(cap, dtype=np.int64)
    nu = np.empty(cap, dtype=np.int64)
    keys = np.empty(cap, dtype=np.uint64)
    size = 16
    while size < 2 * cap:
        size *= 2
    hp = np.zeros(size, dtype=np.int64)
    hc = np.zeros(size, dtype=np.int64)
    hv = np.zeros(size, dtype=np.int64)
    hs = np.zeros(size, dtype=np.int64)
    for r in range(replicas):
        rid = first_replica + r
        stamp = r + 1
        fseed = stream_key(seed, 2 * rid)
        wkey = stream_key(seed, 2 * rid + 1)
        keys[0] = root_key(fseed, np.uint64(1))
        parent[0] = -1
        depth[0] = 0
        tree[0] = 1
        nu[0] = vertex_offspring(keys[0], ccdf, kappa, coeff)
        nv = 1
        cur = 0
        hmax = 0
        roots = 1
        ci = 0
        while ci < nc and checkpoints[ci] == 0:
            out_h[r, ci] = 0
            out_max[r, ci] = 0
            out_root[r, ci] = 1
            ci += 1
        for t in range(n_steps):
            j = step_choice(uniform(wkey, t), nu[cur], m)
            if j == 0:
                p = parent[cur]
                if p >= 0:
                    cur = p
                else:
                    v = nv
                    nv += 1
                    tree[v] = tree[cur] + 1
                    keys[v] = root_key(fseed, np.uint64(tree[v]))
                    parent[v] = -1
                    depth[v] = 0
                    nu[v] = vertex_offspring(keys[v], ccdf, kappa, coeff)
                    cur = v
            else:
                s, found = hm.find(hp, hc, hs, stamp, cur, j)
                if found:
                    cur = hv[s]
                else:
                    v = nv
                    nv += 1
                    hp[s] = cur
                    hc[s] = j
                    hv[s] = v
                    hs[s] = stamp
                    keys[v] = child_key(keys[cur], np.uint64(j))
                    parent[v] = cur
                    depth[v] = depth[cur] + 1
                    tree[v] = tree[cur]
                    nu[v] = vertex_offspring(keys[v], ccdf, kappa, coeff)
                    cur = v
            h = depth[cur]
            if h > hmax:
                hmax = h
            if h == 0:
                roots += 1
            while ci < nc and checkpoints[ci] == t + 1:
                out_h[r, ci] = h
                out_max[r, ci] = hmax
                out_root[r, ci] = roots
                ci += 1
    return out_h, out_max, out_root


def walk_heights_batch(
    law: OffspringLaw, n_steps: int, replicas: int, seed: int, checkpoints=None, first_replica: int = 0
):
    """Heights of independent forest walks at the given steps.

    Replica ``r`` uses forest and walk streams derived from ``(seed, r)``,
    so results do not depend on how replicas are split into calls.
    Returns ``(height, running_max, visits_to_generation_0)``, each of
    shape ``(replicas, len(checkpoints))``.
    """
    if checkpoints is None:
        checkpoints = [n_steps]
    cps = np.asarray(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if cps.size and (cps[0] < 0 or cps[-1] > n_steps):
        raise ValueError("checkpoints must lie in [0, n_steps]")
    return _walk_heights_batch(
        int(n_steps), float(law.mean), np.uint64(int(seed) % 2**64), int(first_replica), int(replicas),
        cps, law.ccdf, law.kappa, law.tail_coeff,
    )


# =============================================================================
# Trial mechanics
# =============================================================================


@nb.njit(cache=True)
def _children_trials(k, nu, m, key):
    counts = np.zeros(nu, dtype=np.int64)
    q = m / (m + nu)
    failures = 0
    ctr = 0
    while failures < k:
        u = uniform(key, ctr)
        ctr += 1
        if u < q:
            failures += 1
        else:
            j = np.int64((u - q) / (1.0 - q) * nu)
            if j >= nu:
                j = nu - 1
            counts[j] += 1
    return counts


def sample_children_local_times(k: int, nu: int, m: float, rng=None) -> NDArray[np.int64]:
    """Local times of the ``nu`` children of a vertex entered ``k`` times.

    Runs the success/failure trials one at a time until the ``k``-th failure.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if nu == 0:
        return np.zeros(0, dtype=np.int64)
    return _children_trials(int(k), int(nu), float(m), seed_from(rng))


def negative_multinomial_pmf(counts, k: int, m: float) -> float:
    """Exact probability of the children local-time vector ``counts``."""
    counts = np.asarray(counts, dtype=np.int64)
    nu = counts.size
    total = int(counts.sum())
    logp = (
        gammaln(k + total) - gammaln(k) - gammaln(counts + 1).sum()
        + k * math.log(m / (m + nu)) - total * math.log(m + nu)
    )
    return float(np.exp(logp))


@nb.njit(cache=True)
def _sorted_runs(buf, n):
    """Distinct values of ``buf[:n]`` with multiplicities, in place."""
    if n > 1:
        buf[:n] = np.sort(buf[:n])
    vals = np.empty(n, dtype=np.int64)
    mult = np.empty(n, dtype=np.int64)
    r = 0
    i = 0
    while i < n:
        j = i
        while j < n and buf[j] == buf[i]:
            j += 1
        vals[r] = buf[i]
        mult[r] = j - i
        r += 1
        i = j
    return vals[:r], mult[:r]


@nb.njit(cache=True)
def _successes(k, nu, m, key, ctr):
    """Total successes before the ``k``-th failure, one geometric per failure."""
    q = m / (m + nu)
    s = 0
    for _ in range(k):
        s += geometric_count(uniform(key, ctr), q)
        ctr += 1
    return s, ctr


# =============================================================================
# Excursion trees
# =============================================================================


@nb.njit(cache=True)
def _excursion_tree(root_type, m, key, ccdf, kappa, coeff, depth_cap, size_cap, stop_type1):
    cap = 1024
    parent = np.empty(cap, dtype=np.int64)
    cidx = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    beta = np.empty(cap, dtype=np.int64)
    nu = np.empty(cap, dtype=np.int64)
    parent[0] = -1
    cidx[0] = 0
    depth[0] = 0
    beta[0] = root_type
    nu[0] = -1
    nv = 1
    head = 0
    ctr = 0
    status = 0
    buf = np.empty(16, dtype=np.int64)
    while head < nv:
        v = head
        head += 1
        if stop_type1 and v > 0 and beta[v] == 1:
            continue
        if depth[v] >= depth_cap:
            status = 2
            break
        n_kids = draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
        ctr += 1
        nu[v] = n_kids
        if n_kids == 0:
            continue
        s, ctr = _successes(beta[v], n_kids, m, key, ctr)
        if s == 0:
            continue
        if nv + s > size_cap:
            status = 1
            break
        if s > buf.shape[0]:
            buf = np.empty(2 * s, dtype=np.int64)
        for i in range(s):
            j = np.int64(uniform(key, ctr) * n_kids)
            ctr += 1
            buf[i] = j if j < n_kids else n_kids - 1
        vals, mult = _sorted_runs(buf, s)
        need = nv + vals.shape[0]
        if need > cap:
            while cap < need:
                cap *= 2
            parent = _grow(parent, cap)
            cidx = _grow(cidx, cap)
            depth = _grow(depth, cap)
            beta = _grow(beta, cap)
            nu = _grow(nu, cap)
        for r in range(vals.shape[0]):
            parent[nv] = v
            cidx[nv] = vals[r] + 1
            depth[nv] = depth[v] + 1
            beta[nv] = mult[r]
            nu[nv] = -1
            nv += 1
    return parent[:nv], cidx[:nv], depth[:nv], beta[:nv], nu[:nv], status


@nb.njit(cache=True)
def _grow(a, cap):
    out = np.empty(cap, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


def excursion_beta_tree(
    law: OffspringLaw,
    root_type: int,
    depth_cap: int = 10**4,
    size_cap: int = 10**7,
    rng=None,
    stop_at_type1: bool = False,
) -> MarkedForest:
    """Local-time tree below a vertex entered ``root_type`` times.

    Each vertex draws ``nu`` from ``law`` and its children's local times
    from the trial mechanics; children never entered are pruned.  With
    ``stop_at_type1`` the recursion stops at vertices of local time 1
    below the root, which is all that is needed for the optional line.

    Raises :class:`CapExceeded` carrying the partial tree when a cap is hit.
    """
    if root_type < 1:
        raise ValueError("root_type must be at least 1")
    *arrays, status = _excursion_tree(
        int(root_type), float(law.mean), seed_from(rng), law.ccdf, law.kappa, law.tail_coeff,
        int(depth_cap), int(size_cap), bool(stop_at_type1),
    )
    tree = MarkedForest(*arrays)
    if status:
        raise CapExceeded("size_cap" if status == 1 else "depth_cap", tree)
    return tree


# =============================================================================
# Optional-line sampler
# =============================================================================


@nb.njit(cache=True)
def explore_optional_line(t0, m, key, ctr, ccdf, kappa, coeff, budget, complete, rpow, stack_t, stack_d, buf):
    """Walk the region ``B^1`` below a vertex of local time ``t0``.

    Returns ``(ctr, L1, B1, beta_sum, len_sum, r_sum, fx_offspring, work,
    status)``.  ``len_sum`` adds the generations of ``L^1`` members below
    the root, ``r_sum`` adds ``rpow**generation`` over ``B^1`` and
    ``fx_offspring`` counts the walk steps that the optional-line
    reduction with visit counts attaches to the root.  ``status`` is 0 when
    exact, 1 when a group of children beyond the work budget was replaced
    by its conditional mean (only ``L1`` is then meaningful) and 2 when
    the budget was exhausted with ``complete`` off.
    """
    L1 = 0
    B1 = 0
    bsum = 0
    lsum = 0
    rsum = 0.0
    fx = 0
    work = 0
    status = 0
    sp = 0
    stack_t[0] = t0
    stack_d[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        t = stack_t[sp]
        d = stack_d[sp]
        n_kids = draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
        ctr += 1
        work += 1
        s = 0
        if n_kids > 0:
            s, ctr = _successes(t, n_kids, m, key, ctr)
        fx += s if d == 0 else t + s
        if s == 0:
            continue
        if work + s > budget:
            if complete:
                # each child of local time b has E[L^1] = b
                L1 += s
                status = 1
                continue
            status = 2
            break
        for i in range(s):
            j = np.int64(uniform(key, ctr) * n_kids)
            ctr += 1
            buf[i] = j if j < n_kids else n_kids - 1
        vals, mult = _sorted_runs(buf, s)
        for r in range(vals.shape[0]):
            b = mult[r]
            B1 += 1
            bsum += b
            rsum += rpow ** (d + 1)
            work += 1
            if b == 1:
                L1 += 1
                lsum += d + 1
                fx += 1
            else:
                stack_t[sp] = b
                stack_d[sp] = d + 1
                sp += 1
    return ctr, L1, B1, bsum, lsum, rsum, fx, work, status


@nb.njit(cache=True)
def _optional_line_batch(t0, replicas, seed, first_replica, m, ccdf, kappa, coeff, budget, rpow):
    L1 = np.zeros(replicas, dtype=np.int64)
    B1 = np.zeros(replicas, dtype=np.int64)
    bsum = np.zeros(replicas, dtype=np.int64)
    lsum = np.zeros(replicas, dtype=np.int64)
    rsum = np.zeros(replicas, dtype=np.float64)
    fx = np.zeros(replicas, dtype=np.int64)
    status = np.zeros(replicas, dtype=np.int64)
    stack_t = np.empty(budget + 2, dtype=np.int64)
    stack_d = np.empty(budget + 2, dtype=np.int64)
    buf = np.empty(budget + 2, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, first_replica + r)
        out = explore_optional_line(t0, m, key, 0, ccdf, kappa, coeff, budget, False, rpow, stack_t, stack_d, buf)
        L1[r] = out[1]
        B1[r] = out[2]
        bsum[r] = out[3]
        lsum[r] = out[4]
        rsum[r] = out[5]
        fx[r] = out[6]
        status[r] = out[8]
    return L1, B1, bsum, lsum, rsum, fx, status


@dataclass
class OptionalLineSample:
    """Per-replica statistics of ``B^1`` below a root of fixed local time.

    Replicas that hit the size cap are flagged in ``capped``; their
    statistics are partial and excluded by :meth:`valid`.
    """

    root_type: int
    L1: NDArray[np.int64]
    B1: NDArray[np.int64]
    beta_sum: NDArray[np.int64]
    length_sum: NDArray[np.int64]
    r_sum: NDArray[np.float64]
    fx_offspring: NDArray[np.int64]
    capped: NDArray[np.bool_]
    r: float

    @property
    def n_capped(self) -> int:
        return int(self.capped.sum())

    def valid(self) -> "OptionalLineSample":
        ok = ~self.capped
        return OptionalLineSample(
            self.root_type, self.L1[ok], self.B1[ok], self.beta_sum[ok], self.length_sum[ok],
            self.r_sum[ok], self.fx_offspring[ok], self.capped[ok], self.r,
        )


def sample_optional_line(
    law: OffspringLaw, root_type: int, replicas: int, rng=None, size_cap: int = 10**7, r: float = 1.1,
    first_replica: int = 0,
) -> OptionalLineSample:
    """Independent draws of the optional-line statistics under ``P_i``.

    Uses the same trial mechanics as :func:`excursion_beta_tree` with the
    recursion stopped at the local-time-1 frontier.
    """
    if root_type < 1:
        raise ValueError("root_type must be at least 1")
    out = _optional_line_batch(
        int(root_type), int(replicas), seed_from(rng), int(first_replica), float(law.mean),
        law.ccdf, law.kappa, law.tail_coeff, int(size_cap), float(r),
    )
    *stats, status = out
    return OptionalLineSample(int(root_type), *stats, status != 0, float(r))


# =============================================================================
# Mean matrix and martingales
# =============================================================================


@nb.njit(cache=True)
def _log_binom_pmf(s, j, p):
    if j > s:
        return -np.inf
    if p >= 1.0:
        return 0.0 if j == s else -np.inf
    return (
        math.lgamma(s + 1.0) - math.lgamma(j + 1.0) - math.lgamma(s - j + 1.0)
        + j * math.log(p) + (s - j) * math.log1p(-p)
    )


@nb.njit(cache=True)
def _first_generation(i, j_max, replicas, seed, m, ccdf, kappa, coeff, rao_blackwell):
    rows = np.zeros((replicas, j_max), dtype=np.float64)
    nus = np.zeros(replicas, dtype=np.float64)
    buf = np.empty(64, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        n_kids = draw_offspring(uniform(key, 0), ccdf, kappa, coeff)
        nus[r] = n_kids
        if n_kids == 0:
            continue
        s, ctr = _successes(i, n_kids, m, key, 1)
        if s == 0:
            continue
        if rao_blackwell:
            # E[#{children with count j} | nu, S] = nu * Binom(S, 1/nu)(j)
            p = 1.0 / n_kids
            for j in range(1, j_max + 1):
                rows[r, j - 1] = n_kids * math.exp(_log_binom_pmf(s, j, p))
        else:
            if s > buf.shape[0]:
                buf = np.empty(2 * s, dtype=np.int64)
            for t in range(s):
                c = np.int64(uniform(key, ctr) * n_kids)
                ctr += 1
                buf[t] = c if c < n_kids else n_kids - 1
            vals, mult = _sorted_runs(buf, s)
            for t in range(mult.shape[0]):
                if mult[t] <= j_max:
                    rows[r, mult[t] - 1] += 1.0
    return rows, nus


def mean_matrix_mc(
    law: OffspringLaw,
    i_max: int,
    j_max: int,
    replicas: int,
    rng=None,
    rao_blackwell: bool = True,
    control_variate: bool = True,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Monte Carlo ``E_i[#{children with local time j}]`` for ``i <= i_max``.

    ``S`` (total successes) comes from the trial mechanics.  With
    ``rao_blackwell`` each replica contributes the exact conditional mean
    given ``(nu, S)``; otherwise successes are assigned to children and
    counted.  Counts grow linearly in ``nu``, whose variance is infinite,
    so ``control_variate`` subtracts ``b (nu - m)`` with ``b`` fitted by
    least squares on the same sample (the estimator stays unbiased for any
    ``b``).  Returns ``(estimate, std_err)``, both ``(i_max, j_max)``.
    """
    seed = seed_from(rng)
    est = np.zeros((i_max, j_max))
    se = np.zeros((i_max, j_max))
    for i in range(1, i_max + 1):
        rows, nus = _first_generation(
            i, j_max, int(replicas), np.uint64(stream_key(seed, i)), float(law.mean),
            law.ccdf, law.kappa, law.tail_coeff, bool(rao_blackwell),
        )
        if control_variate:
            xc = nus - nus.mean()
            slope = (xc @ (rows - rows.mean(axis=0))) / (xc @ xc)
            rows = rows - np.outer(nus - law.mean, slope)
        est[i - 1] = rows.mean(axis=0)
        se[i - 1] = rows.std(axis=0) / np.sqrt(replicas)
    return est, se


@nb.njit(cache=True)
def _beta_generations(i, n_gen, replicas, seed, m, ccdf, kappa, coeff, max_pop):
    z = np.zeros((replicas, n_gen + 1), dtype=np.int64)
    capped = np.zeros(replicas, dtype=np.bool_)
    cur = np.empty(1024, dtype=np.int64)
    nxt = np.empty(1024, dtype=np.int64)
    buf = np.empty(1024, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        ctr = 0
        cur[0] = i
        ncur = 1
        z[r, 0] = i
        for g in range(1, n_gen + 1):
            nn = 0
            total = 0
            for a in range(ncur):
                n_kids = draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
                ctr += 1
                if n_kids == 0:
                    continue
                s, ctr = _successes(cur[a], n_kids, m, key, ctr)
                if s == 0:
                    continue
                if s > max_pop:
                    capped[r] = True
                    break
                if s > buf.shape[0]:
                    buf = np.empty(2 * s, dtype=np.int64)
                for t in range(s):
                    c = np.int64(uniform(key, ctr) * n_kids)
                    ctr += 1
                    buf[t] = c if c < n_kids else n_kids - 1
                vals, mult = _sorted_runs(buf, s)
                if nn + mult.shape[0] > nxt.shape[0]:
                    nxt = _grow(nxt, 2 * (nn + mult.shape[0]))
                for t in range(mult.shape[0]):
                    nxt[nn] = mult[t]
                    nn += 1
                total += s
            if capped[r] or nn > max_pop:
                capped[r] = True
                break
            z[r, g] = total
            if nxt.shape[0] > cur.shape[0]:
                cur = np.empty(nxt.shape[0], dtype=np.int64)
            cur[:nn] = nxt[:nn]
            ncur = nn
            if nn == 0:
                break
    return z, capped


def beta_generation_sums(
    law: OffspringLaw, i: int, n_gen: int, replicas: int, rng=None, max_pop: int = 10**8
) -> tuple[NDArray[np.int64], NDArray[np.bool_]]:
    """``Z_n = sum over generation n of beta(u)`` under ``P_i``, for ``n <= n_gen``.

    Returns ``(Z, capped)`` with ``Z`` of shape ``(replicas, n_gen + 1)``.
    """
    return _beta_generations(
        int(i), int(n_gen), int(replicas), seed_from(rng), float(law.mean),
        law.ccdf, law.kappa, law.tail_coeff, int(max_pop),
    )


@nb.njit(cache=True)
def _beta_paths(i, depth, replicas, seed, m, ccdf, kappa, coeff):
    cap = 1024
    out_rep = np.empty(cap, dtype=np.int64)
    out_path = np.empty((cap, depth), dtype=np.int64)
    n_out = 0
    cur = np.empty((1024, depth + 1), dtype=np.int64)
    nxt = np.empty((1024, depth + 1), dtype=np.int64)
    buf = np.empty(1024, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        ctr = 0
        cur[0, 0] = i
        ncur = 1
        for g in range(1, depth + 1):
            nn = 0
            for a in range(ncur):
                n_kids = draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
                ctr += 1
                if n_kids == 0:
                    continue
                s, ctr = _successes(cur[a, g - 1], n_kids, m, key, ctr)
                if s == 0:
                    continue
                if s > buf.shape[0]:
                    buf = np.empty(2 * s, dtype=np.int64)
                for t in range(s):
                    c = np.int64(uniform(key, ctr) * n_kids)
                    ctr += 1
                    buf[t] = c if c < n_kids else n_kids - 1
                vals, mult = _sorted_runs(buf, s)
                if nn + mult.shape[0] > nxt.shape[0]:
                    bigger = np.empty((2 * (nn + mult.shape[0]), depth + 1), dtype=np.int64)
                    bigger[:nn] = nxt[:nn]
                    nxt = bigger
                for t in range(mult.shape[0]):
                    nxt[nn, :g] = cur[a, :g]
                    nxt[nn, g] = mult[t]
                    nn += 1
            if nxt.shape[0] > cur.shape[0]:
                cur = np.empty(nxt.shape, dtype=np.int64)
            cur[:nn] = nxt[:nn]
            ncur = nn
            if nn == 0:
                break
        if ncur > 0 and nn > 0:
            if n_out + ncur > cap:
                while cap < n_out + ncur:
                    cap *= 2
                out_rep = _grow(out_rep, cap)
                bigger = np.empty((cap, depth), dtype=np.int64)
                bigger[:n_out] = out_path[:n_out]
                out_path = bigger
            for a in range(ncur):
                out_rep[n_out] = r
                out_path[n_out] = cur[a, 1:]
                n_out += 1
    return out_rep[:n_out], out_path[:n_out]


def beta_tree_paths(
    law: OffspringLaw, i: int, depth: int, replicas: int, rng=None
) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Ancestral local-time paths of all generation-``depth`` vertices.

    Returns ``(replica, paths)`` where row ``q`` of ``paths`` is
    ``(beta(u_1), ..., beta(u_depth))`` for a vertex ``u`` of replica
    ``replica[q]``; only vertices with positive local time appear.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    return _beta_paths(
        int(i), int(depth), int(replicas), seed_from(rng), float(law.mean),
        law.ccdf, law.kappa, law.tail_coeff,
    )


@nb.njit(cache=True)
def _gw_sizes(k_max, replicas, seed, ccdf, kappa, coeff, max_pop):
    z = np.zeros((replicas, k_max + 1), dtype=np.int64)
    capped = np.zeros(replicas, dtype=np.bool_)
    for r in range(replicas):
        key = stream_key(seed, r)
        ctr = 0
        pop = 1
        z[r, 0] = 1
        for k in range(1, k_max + 1):
            if pop > max_pop:
                capped[r] = True
                break
            nxt = 0
            for _ in range(pop):
                nxt += draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
                ctr += 1
            z[r, k] = nxt
            pop = nxt
    return z, capped


def gw_generation_sizes(
    law: OffspringLaw, k_max: int, replicas: int, rng=None, max_pop: int = 5 * 10**7
) -> tuple[NDArray[np.int64], NDArray[np.bool_]]:
    """Generation sizes of independent Galton-Watson trees up to ``k_max``."""
    return _gw_sizes(int(k_max), int(replicas), seed_from(rng), law.ccdf, law.kappa, law.tail_coeff, int(max_pop))
