"""Spinal decompositions of the local-time tree.

Under ``P_i`` the local times ``beta`` of a forest walk form a multitype
branching process whose mean matrix ``M`` has left eigenvector
``a_i = (m-1) m^-i`` and right eigenvector ``b_i = (1 - 1/m) i`` for the
eigenvalue 1.  Tilting by the additive martingale ``Z_n = sum beta(u)``
produces a spine whose types form a Markov chain with transitions
``p_hat(i, j) = m_ij b_j / b_i``.  Explicitly ``p_hat(i, .)`` is the law of
``1 + NegBin(i + 1, 1/(m+1))``.

Two samplers realise the tilted tree:

* :func:`spinal_tree_v1` tilts the reproduction of each spine vertex by
  ``Z_1`` exactly: ``nu`` becomes size-biased and the total number of
  successes ``S`` becomes ``1 + NegBin(t + 1, p)`` (size-biasing a
  negative binomial shifts it by one and adds a failure);
* :func:`spinal_tree_v2` gives spine vertices size-biased offspring, picks
  the spine child uniformly and runs two walks from every spine vertex,
  each killed when it steps above its starting point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from numpy.typing import NDArray
from scipy.special import gammaln

from ._rng import geometric_count, seed_from, stream_key, uniform
from .heavy_tail import OffspringLaw, draw_offspring, size_biased
from .walk import (
    MarkedForest,
    _grow,
    _sorted_runs,
    _successes,
    explore_optional_line,
)

__all__ = [
    "ReweightingError",
    "EigenData",
    "SpineChain",
    "SpinalTree",
    "SpineBatch",
    "m_entry",
    "p_hat",
    "p_hat_row",
    "eigen_data",
    "spine_chain",
    "spine_chain_batch",
    "spinal_tree_v1",
    "spine_v1_batch",
    "spinal_tree_v2",
    "spine_v2_batch",
    "reweighted_spine_step",
    "sample_sibling_sum_V",
    "sibling_sum_batch",
    "sample_L1_spine",
    "l1_spine_batch",
    "l1_sibling_batch",
    "spine_expectation",
    "sibling_tail_const",
    "tail_constants",
]


class ReweightingError(RuntimeError):
    """Importance weights degenerate (effective sample size too small)."""


# =============================================================================
# Mean matrix and eigenvectors
# =============================================================================


def m_entry(i, j, m: float):
    """``m_ij = C(i+j-1, j) m^(i+1) / (m+1)^(i+j)`` evaluated in log space."""
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    logv = (
        gammaln(i + j) - gammaln(i) - gammaln(j + 1.0)
        + (i + 1.0) * math.log(m) - (i + j) * math.log(m + 1.0)
    )
    out = np.exp(logv)
    return float(out) if out.ndim == 0 else out


def p_hat(i, j, m: float):
    """Spine transition ``m_ij * j / i``."""
    return m_entry(i, j, m) * np.asarray(j, dtype=np.float64) / np.asarray(i, dtype=np.float64)


def p_hat_row(i: int, m: float, tol: float = 1e-14) -> NDArray[np.float64]:
    """Row ``p_hat(i, 1..J)`` truncated where the remaining mass is below ``tol``."""
    out = []
    total = 0.0
    j = 1
    while True:
        p = float(p_hat(i, j, m))
        out.append(p)
        total += p
        if j > i and 1.0 - total < tol:
            break
        if j > 100000:
            break
        j += 1
    return np.array(out)


@dataclass(frozen=True)
class EigenData:
    """Truncated mean matrix with its eigenvectors for eigenvalue 1.

    ``stationary`` is the invariant law of ``p_hat``, proportional to
    ``a_i b_i``, i.e. to ``i m^-i``.
    """

    m: float
    truncation: int
    a: NDArray[np.float64]
    b: NDArray[np.float64]
    stationary: NDArray[np.float64]
    M: NDArray[np.float64]
    P_hat: NDArray[np.float64]


def eigen_data(m: float, truncation: int = 200) -> EigenData:
    idx = np.arange(1, truncation + 1, dtype=np.float64)
    a = (m - 1.0) * m**-idx
    b = (1.0 - 1.0 / m) * idx
    M = m_entry(idx[:, None], idx[None, :], m)
    P = M * idx[None, :] / idx[:, None]
    st = a * b
    return EigenData(m, truncation, a, b, st / st.sum(), M, P)


# =============================================================================
# Spine type chain
# =============================================================================


@nb.njit(cache=True)
def next_type(i, u, m):
    """Inverse-CDF draw from ``p_hat(i, .)``, scanning ``j = 1, 2, ...``."""
    x = 1.0 / (m + 1.0)
    logp = (i + 1.0) * math.log(m * x)
    if logp > -700.0:
        p = math.exp(logp)
        cdf = p
        j = 1
        while u > cdf and j < 10_000_000:
            p *= (i + j) * x / j
            j += 1
            cdf += p
            if p == 0.0 and cdf < u:
                break
        if u <= cdf:
            return j
    # deep rows underflow: 1 + NegBin(i + 1, x) via its quantile
    mean = (i + 1.0) * x / (1.0 - x)
    return 1 + np.int64(mean)


@dataclass
class SpineChain:
    """Types ``beta(omega_0), beta(omega_1), ...`` up to ``tau1`` or the cap.

    ``tau1`` is ``None`` when the cap was hit first.
    """

    types: NDArray[np.int64]
    tau1: int | None
    sibling_records: list | None = None


@nb.njit(cache=True)
def _chain_one(i, m, key, cap, out):
    out[0] = i
    t = i
    for k in range(1, cap + 1):
        t = next_type(t, uniform(key, k - 1), m)
        out[k] = t
        if t == 1:
            return k
    return -1


def spine_chain(i: int, m: float, rng=None, cap: int = 10**4) -> SpineChain:
    """Run the spine type chain from ``i`` until it first returns to type 1."""
    if i < 1:
        raise ValueError("initial type must be at least 1")
    out = np.empty(cap + 1, dtype=np.int64)
    tau = _chain_one(int(i), float(m), seed_from(rng), int(cap), out)
    if tau < 0:
        return SpineChain(out, None)
    return SpineChain(out[: tau + 1].copy(), int(tau))


@nb.njit(cache=True)
def _chain_batch(i, replicas, seed, m, cap, j_occ):
    tau = np.empty(replicas, dtype=np.int64)
    bsum = np.zeros(replicas, dtype=np.int64)
    occ = np.zeros((replicas, j_occ + 1), dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        t = i
        tau[r] = -1
        for k in range(1, cap + 1):
            t = next_type(t, uniform(key, k - 1), m)
            bsum[r] += t
            occ[r, t if t <= j_occ else 0] += 1
            if t == 1:
                tau[r] = k
                break
    return tau, bsum, occ


def spine_chain_batch(i: int, m: float, replicas: int, rng=None, cap: int = 10**4, j_occ: int = 10):
    """Many independent chains from ``i``.

    Returns ``(tau1, beta_sum, occupation)``: ``tau1`` is ``-1`` for capped
    chains, ``beta_sum`` adds ``beta(omega_k)`` for ``1 <= k <= tau1`` and
    ``occupation[r, j]`` counts visits to ``j`` at those steps (column 0
    collects types above ``j_occ``).
    """
    return _chain_batch(int(i), int(replicas), seed_from(rng), float(m), int(cap), int(j_occ))


# =============================================================================
# Construction 1: exact Z_1-tilt of the spine reproduction
# =============================================================================


@nb.njit(cache=True)
def _tilted_successes(t, nu, m, key, ctr):
    """``1 + NegBin(t + 1, nu / (m + nu))``: successes under the ``S``-tilt."""
    s, ctr = _successes(t + 1, nu, m, key, ctr)
    return s + 1, ctr


@nb.njit(cache=True)
def _binomial(n, p, u):
    """Inverse-CDF binomial draw; normal quantile when the mass underflows."""
    if n <= 0 or p <= 0.0:
        return 0
    logq = n * math.log1p(-p)
    if logq < -700.0:
        mu = n * p
        sd = math.sqrt(mu * (1.0 - p))
        z = math.sqrt(2.0) * _erfinv(2.0 * u - 1.0)
        k = np.int64(mu + sd * z + 0.5)
        return min(max(k, 0), n)
    pk = math.exp(logq)
    cdf = pk
    k = 0
    while u > cdf and k < n:
        pk *= (n - k) / (k + 1.0) * p / (1.0 - p)
        k += 1
        cdf += pk
    return k


@nb.njit(cache=True)
def _erfinv(y):
    # Giles' single-precision-style approximation refined by two Newton steps
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        x = 2.81022636e-08
        for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
                  -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
            x = c + x * w
    else:
        w = math.sqrt(w) - 3.0
        x = -0.000200214257
        for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
                  -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
            x = c + x * w
    x *= y
    for _ in range(2):
        err = math.erf(x) - y
        x -= err / (2.0 / math.sqrt(math.pi) * math.exp(-x * x))
    return x


@nb.njit(cache=True)
def _v1_batch(i, depth, replicas, seed, m, sb_ccdf, sb_kappa, sb_coeff):
    types = np.empty((replicas, depth + 1), dtype=np.int64)
    nus = np.empty((replicas, depth), dtype=np.int64)
    sib = np.empty((replicas, depth), dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        ctr = 0
        t = i
        types[r, 0] = i
        for k in range(depth):
            nu = draw_offspring(uniform(key, ctr), sb_ccdf, sb_kappa, sb_coeff)
            ctr += 1
            s, ctr = _tilted_successes(t, nu, m, key, ctr)
            # the spine follows one success; the other s - 1 land uniformly
            count = 1 + _binomial(s - 1, 1.0 / nu, uniform(key, ctr))
            ctr += 1
            nus[r, k] = nu
            sib[r, k] = s - count
            t = count
            types[r, k + 1] = t
    return types, nus, sib


@dataclass
class SpineBatch:
    """Spine data of independent tilted trees.

    ``types[r, k] = beta(omega_k)``, ``nu[r, k] = nu(omega_k)`` and
    ``sibling_sum[r, k]`` is the total local time of the siblings of
    ``omega_{k+1}``.  ``capped`` flags replicas cut short by a step cap.
    """

    types: NDArray[np.int64]
    nu: NDArray[np.int64]
    sibling_sum: NDArray[np.int64]
    capped: NDArray[np.bool_]
    steps: NDArray[np.int64] | None = None

    @property
    def n_capped(self) -> int:
        return int(self.capped.sum())


def _require_supercritical(law: OffspringLaw) -> None:
    if not law.mean > 1.0:
        raise ValueError(f"the spine constructions need m > 1, got m = {law.mean}")


def spine_v1_batch(i: int, depth: int, law: OffspringLaw, replicas: int, rng=None) -> SpineBatch:
    """Spine of the ``Z_1``-tilted construction for many replicas."""
    _require_supercritical(law)
    sb = size_biased(law)
    types, nus, sib = _v1_batch(
        int(i), int(depth), int(replicas), seed_from(rng), float(law.mean), sb.ccdf, sb.kappa, sb.tail_coeff
    )
    return SpineBatch(types, nus, sib, np.zeros(replicas, dtype=np.bool_))


@nb.njit(cache=True)
def _v1_tree(i, depth, m, key, ccdf, kappa, coeff, sb_ccdf, sb_kappa, sb_coeff, off_spine, size_cap):
    cap = 256
    parent = np.empty(cap, dtype=np.int64)
    cidx = np.empty(cap, dtype=np.int64)
    dep = np.empty(cap, dtype=np.int64)
    beta = np.empty(cap, dtype=np.int64)
    nu = np.empty(cap, dtype=np.int64)
    on_spine = np.zeros(cap, dtype=np.bool_)
    parent[0] = -1
    cidx[0] = 0
    dep[0] = 0
    beta[0] = i
    nu[0] = -1
    on_spine[0] = True
    nv = 1
    head = 0
    ctr = 0
    buf = np.empty(64, dtype=np.int64)
    while head < nv:
        v = head
        head += 1
        if dep[v] >= depth or (not on_spine[v] and not off_spine):
            continue
        if on_spine[v]:
            n_kids = draw_offspring(uniform(key, ctr), sb_ccdf, sb_kappa, sb_coeff)
            ctr += 1
            s, ctr = _tilted_successes(beta[v], n_kids, m, key, ctr)
        else:
            n_kids = draw_offspring(uniform(key, ctr), ccdf, kappa, coeff)
            ctr += 1
            s = 0
            if n_kids > 0:
                s, ctr = _successes(beta[v], n_kids, m, key, ctr)
        nu[v] = n_kids
        if s == 0:
            continue
        if nv + s > size_cap:
            return parent[:nv], cidx[:nv], dep[:nv], beta[:nv], nu[:nv], on_spine[:nv], 1
        if s > buf.shape[0]:
            buf = np.empty(2 * s, dtype=np.int64)
        for q in range(s):
            c = np.int64(uniform(key, ctr) * n_kids)
            ctr += 1
            buf[q] = c if c < n_kids else n_kids - 1
        spine = buf[0]
        vals, mult = _sorted_runs(buf, s)
        need = nv + vals.shape[0]
        if need > cap:
            while cap < need:
                cap *= 2
            parent = _grow(parent, cap)
            cidx = _grow(cidx, cap)
            dep = _grow(dep, cap)
            beta = _grow(beta, cap)
            nu = _grow(nu, cap)
            on_spine = _grow(on_spine, cap)
        for q in range(vals.shape[0]):
            parent[nv] = v
            cidx[nv] = vals[q] + 1
            dep[nv] = dep[v] + 1
            beta[nv] = mult[q]
            nu[nv] = -1
            on_spine[nv] = on_spine[v] and vals[q] == spine
            nv += 1
    return parent[:nv], cidx[:nv], dep[:nv], beta[:nv], nu[:nv], on_spine[:nv], 0


@dataclass
class SpinalTree:
    """A marked tree with a distinguished ray ``spine[0], spine[1], ...``."""

    tree: MarkedForest
    spine: NDArray[np.int64]

    @property
    def spine_types(self) -> NDArray[np.int64]:
        return self.tree.beta[self.spine]


def spinal_tree_v1(
    i: int, depth: int, law: OffspringLaw, rng=None, off_spine: bool = True, size_cap: int = 10**7
) -> SpinalTree:
    """Tilted tree to generation ``depth`` (construction 1).

    Spine vertices reproduce under the ``Z_1``-tilted law; the next spine
    vertex is a child chosen with probability proportional to its local
    time; other vertices reproduce under the plain law.  With
    ``off_spine=False`` only the spine and its siblings are generated.
    """
    from .walk import CapExceeded

    if i < 1:
        raise ValueError("initial type must be at least 1")
    _require_supercritical(law)
    sb = size_biased(law)
    parent, cidx, dep, beta, nu, on_spine, status = _v1_tree(
        int(i), int(depth), float(law.mean), seed_from(rng), law.ccdf, law.kappa, law.tail_coeff,
        sb.ccdf, sb.kappa, sb.tail_coeff, bool(off_spine), int(size_cap),
    )
    tree = MarkedForest(parent, cidx, dep, beta, nu)
    spine = np.flatnonzero(on_spine)
    if status:
        raise CapExceeded("size_cap", SpinalTree(tree, spine))
    return SpinalTree(tree, spine)


@nb.njit(cache=True)
def _reweighted_step(i, replicas, seed, m, ccdf, kappa, coeff, j_max):
    w = np.zeros(replicas, dtype=np.float64)
    nus = np.zeros(replicas, dtype=np.int64)
    pj = np.zeros((replicas, j_max + 1), dtype=np.float64)
    buf = np.empty(64, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        n_kids = draw_offspring(uniform(key, 0), ccdf, kappa, coeff)
        nus[r] = n_kids
        if n_kids == 0:
            continue
        s, ctr = _successes(i, n_kids, m, key, 1)
        w[r] = s / i
        if s == 0:
            continue
        if s > buf.shape[0]:
            buf = np.empty(2 * s, dtype=np.int64)
        for q in range(s):
            c = np.int64(uniform(key, ctr) * n_kids)
            ctr += 1
            buf[q] = c if c < n_kids else n_kids - 1
        vals, mult = _sorted_runs(buf, s)
        for q in range(mult.shape[0]):
            # spine picks a child with probability beta / S
            j = mult[q] if mult[q] <= j_max else 0
            pj[r, j] += mult[q] / s
    return w, nus, pj


def reweighted_spine_step(
    i: int, law: OffspringLaw, replicas: int, rng=None, j_max: int = 10, min_ess: float = 0.01
) -> dict:
    """Importance-weighted view of one tilted reproduction step.

    Draws plain reproductions of a type-``i`` vertex and weights them by
    ``Z_1 / i``.  Returns weighted estimates of ``P(nu(omega_0) = k)`` for
    ``k <= j_max`` and ``P(beta(omega_1) = j)``, their standard errors and
    the effective sample size.  Raises :class:`ReweightingError` if the
    ESS falls below ``min_ess * replicas``.
    """
    _require_supercritical(law)
    w, nus, pj = _reweighted_step(
        int(i), int(replicas), seed_from(rng), float(law.mean), law.ccdf, law.kappa, law.tail_coeff, int(j_max)
    )
    ess = w.sum() ** 2 / max((w * w).sum(), 1e-300)
    if ess < min_ess * replicas:
        raise ReweightingError(f"effective sample size {ess:.1f} of {replicas}")
    norm = w.mean()
    ks = np.arange(1, j_max + 1)
    ind_nu = (nus[:, None] == ks[None, :]) * w[:, None]
    wb = pj[:, 1:] * w[:, None]
    return {
        "ess": float(ess),
        "weight_mean": float(norm),
        "p_nu": ind_nu.mean(axis=0) / norm,
        "p_nu_se": ind_nu.std(axis=0) / np.sqrt(replicas) / norm,
        "p_beta": wb.mean(axis=0) / norm,
        "p_beta_se": wb.std(axis=0) / np.sqrt(replicas) / norm,
    }


# =============================================================================
# Construction 2: size-biased spine with killed walks
# =============================================================================


@nb.njit(cache=True)
def _v2_batch(depth, replicas, seed, m, sb_ccdf, sb_kappa, sb_coeff, step_cap):
    types = np.ones((replicas, depth + 1), dtype=np.int64)
    nus = np.zeros((replicas, depth), dtype=np.int64)
    sib = np.zeros((replicas, depth), dtype=np.int64)
    steps = np.zeros(replicas, dtype=np.int64)
    capped = np.zeros(replicas, dtype=np.bool_)
    up = m / (m + 1.0)
    for r in range(replicas):
        key = stream_key(seed, r)
        ctr = 0
        for k in range(depth):
            nus[r, k] = draw_offspring(uniform(key, ctr), sb_ccdf, sb_kappa, sb_coeff)
            ctr += 1
        n = 0
        work = 0
        for k in range(depth):
            for _walk in range(2):
                lev = k
                while True:
                    # steps into siblings of the spine child, each followed
                    # by the return of its excursion
                    g = geometric_count(uniform(key, ctr), (m + 1.0) / (m + nus[r, lev]))
                    ctr += 1
                    sib[r, lev] += g
                    n += 2 * g + 1
                    work += 1
                    if work > step_cap:
                        capped[r] = True
                        break
                    if uniform(key, ctr) < up:
                        ctr += 1
                        if lev == k:
                            break
                        lev -= 1
                    else:
                        ctr += 1
                        types[r, lev + 1] += 1
                        # an excursion into generation `depth` returns a.s.
                        if lev + 1 < depth:
                            lev += 1
                        else:
                            n += 1
                if capped[r]:
                    break
            if capped[r]:
                break
        steps[r] = n
    return types, nus, sib, steps, capped


def spine_v2_batch(depth: int, law: OffspringLaw, replicas: int, rng=None, step_cap: int = 10**7) -> SpineBatch:
    """Spine data of construction 2 started from type 1, for many replicas.

    Local times at generations ``<= depth`` are exact: a walk entering
    generation ``depth`` is returned immediately (its excursion below
    returns with probability one and does not touch those local times).
    ``steps`` counts the walk steps represented; ``step_cap`` bounds the
    spine moves simulated, since sibling excursions cost one draw each.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    _require_supercritical(law)
    sb = size_biased(law)
    types, nus, sib, steps, capped = _v2_batch(
        int(depth), int(replicas), seed_from(rng), float(law.mean), sb.ccdf, sb.kappa, sb.tail_coeff, int(step_cap)
    )
    return SpineBatch(types, nus, sib, capped, steps)


def spinal_tree_v2(depth: int, law: OffspringLaw, rng=None, step_cap: int = 10**7) -> SpineBatch:
    """Single replica of construction 2 (see :func:`spine_v2_batch`)."""
    from .walk import CapExceeded

    out = spine_v2_batch(depth, law, 1, rng, step_cap)
    if out.capped[0]:
        raise CapExceeded("step_cap", out)
    return out


# =============================================================================
# Sibling groups and L^1 under the tilted measure
# =============================================================================


@nb.njit(cache=True, inline="always")
def _sibling_sum(trials, nu_hat, m, key, ctr):
    """Sibling selections before ``trials`` merged failures.

    A trial at a spine vertex with ``nu_hat`` children fails (step up or
    into the spine child) with probability ``(m + 1) / (m + nu_hat)``.
    """
    q = (m + 1.0) / (m + nu_hat)
    v = 0
    for _ in range(trials):
        v += geometric_count(uniform(key, ctr), q)
        ctr += 1
    return v, ctr


@nb.njit(cache=True)
def _sibling_batch(trials, replicas, seed, m, sb_ccdf, sb_kappa, sb_coeff):
    V = np.empty(replicas, dtype=np.int64)
    N = np.empty(replicas, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        nu_hat = draw_offspring(uniform(key, 0), sb_ccdf, sb_kappa, sb_coeff)
        V[r], _ = _sibling_sum(trials, nu_hat, m, key, 1)
        N[r] = nu_hat - 1
    return V, N


def sibling_sum_batch(beta: int, law: OffspringLaw, replicas: int, rng=None):
    """Draws of ``(V, N)``: sibling local-time sum and sibling count."""
    if beta < 1:
        raise ValueError("beta must be at least 1")
    sb = size_biased(law)
    return _sibling_batch(int(beta), int(replicas), seed_from(rng), float(law.mean), sb.ccdf, sb.kappa, sb.tail_coeff)


def sample_sibling_sum_V(beta: int, law: OffspringLaw, rng=None) -> int:
    """One draw of the sibling local-time sum after ``beta`` merged failures."""
    V, _ = sibling_sum_batch(beta, law, 1, rng)
    return int(V[0])


@nb.njit(cache=True)
def _group_L1(trials, nu_hat, m, key, ctr, ccdf, kappa, coeff, budget, stack_t, stack_d, buf, sbuf):
    """``L^1`` carried by the siblings of one spine step.

    Returns ``(ctr, L1, work, completed)``.  Groups or subtrees larger than
    the remaining ``budget`` contribute their conditional mean (each
    sibling of local time ``b`` has ``E[L^1] = b``).
    """
    v, ctr = _sibling_sum(trials, nu_hat, m, key, ctr)
    if v == 0:
        return ctr, 0, 0, False
    if v > budget:
        return ctr, v, 0, True
    n_sib = nu_hat - 1
    for q in range(v):
        c = np.int64(uniform(key, ctr) * n_sib)
        ctr += 1
        sbuf[q] = c if c < n_sib else n_sib - 1
    vals, mult = _sorted_runs(sbuf, v)
    total = 0
    work = v
    completed = False
    for q in range(mult.shape[0]):
        b = mult[q]
        if b == 1:
            total += 1
            continue
        out = explore_optional_line(
            b, m, key, ctr, ccdf, kappa, coeff, max(budget - work, 1), True, 1.0, stack_t, stack_d, buf
        )
        ctr = out[0]
        total += out[1]
        work += out[7]
        if out[8] != 0:
            completed = True
    return ctr, total, work, completed


@nb.njit(cache=True)
def _l1_spine_batch(replicas, seed, first_replica, m, ccdf, kappa, coeff, sb_ccdf, sb_kappa, sb_coeff, budget, chain_cap):
    L1 = np.zeros(replicas, dtype=np.int64)
    tau = np.zeros(replicas, dtype=np.int64)
    completed = np.zeros(replicas, dtype=np.bool_)
    stack_t = np.empty(budget + 2, dtype=np.int64)
    stack_d = np.empty(budget + 2, dtype=np.int64)
    buf = np.empty(budget + 2, dtype=np.int64)
    sbuf = np.empty(budget + 2, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, first_replica + r)
        ctr = 0
        prev = 1
        total = 1
        work = 0
        tau[r] = -1
        for k in range(1, chain_cap + 1):
            t = next_type(prev, uniform(key, ctr), m)
            ctr += 1
            nu_hat = draw_offspring(uniform(key, ctr), sb_ccdf, sb_kappa, sb_coeff)
            ctr += 1
            ctr, l1, w, comp = _group_L1(
                prev + t, nu_hat, m, key, ctr, ccdf, kappa, coeff, max(budget - work, 1),
                stack_t, stack_d, buf, sbuf,
            )
            total += l1
            work += w
            if comp:
                completed[r] = True
            prev = t
            if t == 1:
                tau[r] = k
                break
        L1[r] = total
    return L1, tau, completed


@dataclass
class L1SpineSample:
    """Draws of ``L^1`` under the tilted measure started from type 1.

    ``completed`` flags replicas where part of the sum beyond the work
    budget was replaced by its conditional mean; ``tau1`` is ``-1`` for
    chains that hit the cap.
    """

    L1: NDArray[np.int64]
    tau1: NDArray[np.int64]
    completed: NDArray[np.bool_]
    budget: int

    @property
    def n_completed(self) -> int:
        return int(self.completed.sum())


def l1_spine_batch(
    law: OffspringLaw, replicas: int, rng=None, budget: int = 10**6, chain_cap: int = 10**4, first_replica: int = 0
) -> L1SpineSample:
    """Many draws of ``L^1 = 1 + sum_{k <= tau1} L^1(siblings of omega_k)``.

    Sibling groups come from the merged-failure trials; each sibling of
    local time ``b >= 2`` has its own optional line explored with the
    trial recursion of :mod:`stablewalk.walk`.  Exploration is exact while
    a replica's work stays within ``budget``; beyond it a pending group or
    subtree of total local time ``s`` contributes ``s``, its conditional
    mean.  At large values this only perturbs ``L^1`` by a relative
    amount that vanishes like ``s^(1/kappa - 1)``.
    """
    _require_supercritical(law)
    sb = size_biased(law)
    L1, tau, comp = _l1_spine_batch(
        int(replicas), seed_from(rng), int(first_replica), float(law.mean), law.ccdf, law.kappa, law.tail_coeff,
        sb.ccdf, sb.kappa, sb.tail_coeff, int(budget), int(chain_cap),
    )
    return L1SpineSample(L1, tau, comp, int(budget))


def sample_L1_spine(law: OffspringLaw, rng=None, cap: int = 10**6) -> int:
    """One draw of ``L^1`` under the tilted measure (see :func:`l1_spine_batch`)."""
    return int(l1_spine_batch(law, 1, rng, budget=cap).L1[0])


@nb.njit(cache=True)
def _l1_sibling_batch(trials, replicas, seed, m, ccdf, kappa, coeff, sb_ccdf, sb_kappa, sb_coeff, budget):
    L1 = np.zeros(replicas, dtype=np.int64)
    completed = np.zeros(replicas, dtype=np.bool_)
    stack_t = np.empty(budget + 2, dtype=np.int64)
    stack_d = np.empty(budget + 2, dtype=np.int64)
    buf = np.empty(budget + 2, dtype=np.int64)
    sbuf = np.empty(budget + 2, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, r)
        nu_hat = draw_offspring(uniform(key, 0), sb_ccdf, sb_kappa, sb_coeff)
        _, l1, _, comp = _group_L1(trials, nu_hat, m, key, 1, ccdf, kappa, coeff, budget, stack_t, stack_d, buf, sbuf)
        L1[r] = l1
        completed[r] = comp
    return L1, completed


def l1_sibling_batch(beta: int, law: OffspringLaw, replicas: int, rng=None, budget: int = 10**6):
    """Draws of ``L^1_0``, the optional line carried by one sibling group.

    ``beta`` is the number of merged failures.  Returns ``(L1, completed)``.
    """
    _require_supercritical(law)
    sb = size_biased(law)
    return _l1_sibling_batch(
        int(beta), int(replicas), seed_from(rng), float(law.mean), law.ccdf, law.kappa, law.tail_coeff,
        sb.ccdf, sb.kappa, sb.tail_coeff, int(budget),
    )


# =============================================================================
# Exact spine expectations and tail constants
# =============================================================================


def spine_expectation(f, m: float, i0: int = 1, truncation: int = 200) -> float:
    """``E_hat_i0[sum_{k=1}^{tau1} f(beta_{k-1}, beta_k)]`` by a linear solve.

    ``h(i) = sum_j p_hat(i, j) (f(i, j) + 1{j != 1} h(j))`` on types
    ``1..truncation``; ``f`` takes broadcastable integer arrays.
    """
    idx = np.arange(1, truncation + 1)
    P = p_hat(idx[:, None], idx[None, :], m)
    F = np.asarray(f(idx[:, None], idx[None, :]), dtype=np.float64) * np.ones_like(P)
    rhs = (P * F).sum(axis=1)
    A = np.eye(truncation) - P * (idx[None, :] != 1)
    h = np.linalg.solve(A, rhs)
    return float(h[i0 - 1])


def sibling_tail_const(beta, kappa: float, m: float, tail_const: float):
    """Tail constant of the sibling sum ``V`` after ``beta`` merged failures.

    ``V`` given ``nu_hat`` is negative binomial, close to
    ``Gamma(beta) * nu_hat / (m + 1)`` when ``nu_hat`` is large, so
    ``P(V > x) ~ C_nuhat ((m+1)/x)^(kappa-1) E[Gamma(beta)^(kappa-1)]``.
    """
    beta = np.asarray(beta, dtype=np.float64)
    c_nuhat = tail_const * kappa / (m * (kappa - 1.0))
    out = c_nuhat * (m + 1.0) ** (1.0 - kappa) * np.exp(gammaln(beta + kappa - 1.0) - gammaln(beta))
    return float(out) if out.ndim == 0 else out


def tail_constants(kappa: float, m: float, tail_const: float = 1.0, truncation: int = 200) -> dict:
    """Closed-form tail constants, scaled by ``tail_const``.

    ``c0_closed`` and ``c_kappa_closed`` are the published closed forms
    (``c_kappa = c0 * kappa / (kappa - 1)``) and ``v_linear`` is the
    sibling-sum constant taken linear in ``beta``.  The ``*_spine``
    entries sum the exact sibling-sum constants along the spine chain:
    ``P_hat_1(L^1 > x) ~ c_kappa_spine x^-(kappa-1)`` and, by the
    equivalence of the two tails, ``P_1(L^1 > x) ~ c0_spine x^-kappa``.
    """
    gk = math.gamma(kappa)
    c0 = 2.0 * gk / ((m - 1.0) * (m + 1.0) ** (kappa - 1.0))
    c_kappa = c0 * kappa / (kappa - 1.0)
    c_spine = spine_expectation(
        lambda i, j: sibling_tail_const(i + j, kappa, m, 1.0), m, 1, truncation
    )
    return {
        "c0_closed": c0 * tail_const,
        "c_kappa_closed": c_kappa * tail_const,
        "v_linear_unit": gk * kappa / ((kappa - 1.0) * m * (m + 1.0) ** (kappa - 1.0)) * tail_const,
        "c_kappa_spine": c_spine * tail_const,
        "c0_spine": c_spine * (kappa - 1.0) / kappa * tail_const,
        "n_hat": kappa / (m * (kappa - 1.0)) * tail_const,
    }
