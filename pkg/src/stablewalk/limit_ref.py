"""Reference samples of the stable height process and the limit constants.

The reference is the discrete height process of a critical Galton-Watson
forest with ``P(xi > x) ~ C x^-kappa``.  Its Lukasiewicz walk
``S_k = sum_{j<k} (xi_j - 1)`` rescaled by ``n^(1/kappa)`` converges to a
stable process with Laplace exponent ``C |Gamma(1-kappa)| lambda^kappa``,
so that

    (C |Gamma(1-kappa)|)^(1/kappa) n^(1/kappa - 1) H([ns])  ->  H_s

where ``H`` is the height process of the stable process with Laplace
exponent ``lambda^kappa``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from numpy.typing import NDArray
from scipy.special import gamma

from ._rng import seed_from, stream_key, uniform
from .heavy_tail import OffspringLaw, critical_offspring_law, draw_offspring, sample_offspring

__all__ = [
    "ReferencePath",
    "lukasiewicz",
    "heights_from_lukasiewicz",
    "height_bruteforce",
    "parents_from_heights",
    "critical_gw_height",
    "reference_scale",
    "reference_H_samples",
    "c0_closed_form",
    "compute_Cstar",
    "walk_scale",
    "samples_to_csv",
]


# =============================================================================
# Lukasiewicz walk and height process
# =============================================================================


def lukasiewicz(xi) -> NDArray[np.int64]:
    """``S_0 = 0`` and ``S_{k+1} = S_k + xi_k - 1``; length ``len(xi) + 1``."""
    xi = np.asarray(xi, dtype=np.int64)
    out = np.zeros(xi.size + 1, dtype=np.int64)
    np.cumsum(xi - 1, out=out[1:])
    return out


@nb.njit(cache=True)
def _stack_heights(S, n):
    """``H(k) = #{j < k : S_j = min_{j <= l <= k} S_l}`` for ``k < n``.

    The stack holds the weak ascending records ``j < k`` of ``S`` seen
    backwards from ``k``; each index is pushed and popped at most once.
    """
    H = np.empty(n, dtype=np.int64)
    stack = np.empty(max(n, 1), dtype=np.int64)
    sp = 0
    for k in range(n):
        if k > 0:
            stack[sp] = k - 1
            sp += 1
            while sp > 0 and S[stack[sp - 1]] > S[k]:
                sp -= 1
        H[k] = sp
    return H


def heights_from_lukasiewicz(S) -> NDArray[np.int64]:
    """Height process of the forest coded by ``S`` (one entry per index)."""
    S = np.asarray(S, dtype=np.int64)
    return _stack_heights(S, S.size)


def height_bruteforce(S) -> NDArray[np.int64]:
    """Quadratic evaluation of the record-counting definition."""
    S = np.asarray(S, dtype=np.int64)
    out = np.zeros(S.size, dtype=np.int64)
    for k in range(S.size):
        out[k] = sum(1 for j in range(k) if S[j] == S[j : k + 1].min())
    return out


def parents_from_heights(H) -> NDArray[np.int64]:
    """Parent of vertex ``k`` in depth-first order: the last ``j < k`` with
    ``H(j) = H(k) - 1`` (``-1`` for roots)."""
    H = np.asarray(H, dtype=np.int64)
    last: dict[int, int] = {}
    out = np.full(H.size, -1, dtype=np.int64)
    for k, h in enumerate(H.tolist()):
        if h > 0:
            out[k] = last[h - 1]
        last[h] = k
    return out


@dataclass
class ReferencePath:
    """Lukasiewicz walk and heights of the first ``n`` vertices of a forest."""

    lukasiewicz: NDArray[np.int64]
    height: NDArray[np.int64]
    n: int
    kappa: float
    tail_const: float

    def validate(self) -> None:
        if np.any(np.diff(self.lukasiewicz) < -1):
            raise ValueError("Lukasiewicz increments below -1")
        if np.any(self.height < 0) or np.any(np.diff(self.height) > 1):
            raise ValueError("height process must be nonnegative with increments at most 1")


def critical_gw_height(kappa: float, tail_const: float, n: int, rng=None) -> ReferencePath:
    """First ``n`` vertices of a critical forest with ``P(xi > x) ~ tail_const x^-kappa``."""
    law = critical_offspring_law(kappa, tail_const)
    xi = np.asarray(sample_offspring(law, rng, size=n), dtype=np.int64)
    S = lukasiewicz(xi)
    return ReferencePath(S, heights_from_lukasiewicz(S)[:n], int(n), float(kappa), float(tail_const))


# =============================================================================
# Batched reference samples
# =============================================================================


@nb.njit(cache=True)
def _reference_batch(n, idx, replicas, seed, first_replica, ccdf, kappa, coeff):
    out = np.zeros((replicas, idx.shape[0]), dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    for r in range(replicas):
        key = stream_key(seed, first_replica + r)
        sp = 0
        s = 0
        q = 0
        for k in range(n + 1):
            if k > 0:
                stack[sp] = s
                sp += 1
                s += draw_offspring(uniform(key, k - 1), ccdf, kappa, coeff) - 1
                while sp > 0 and stack[sp - 1] > s:
                    sp -= 1
            while q < idx.shape[0] and idx[q] == k:
                out[r, q] = sp
                q += 1
    return out


def reference_scale(kappa: float, tail_const: float, n: int) -> float:
    """Factor turning discrete heights at size ``n`` into ``H`` with exponent ``lambda^kappa``."""
    return (tail_const * abs(gamma(1.0 - kappa))) ** (1.0 / kappa) * n ** (1.0 / kappa - 1.0)


def reference_H_samples(
    kappa: float,
    n: int,
    replicas: int,
    rng=None,
    s_values=(1.0,),
    tail_const: float = 0.25,
    first_replica: int = 0,
) -> NDArray[np.float64]:
    """Samples of ``H_s`` at the requested times, shape ``(replicas, len(s_values))``.

    Each replica codes an independent critical forest; the height of
    vertex ``floor(n s)`` is rescaled by :func:`reference_scale`.
    """
    law: OffspringLaw = critical_offspring_law(kappa, tail_const)
    s_values = np.asarray(s_values, dtype=np.float64)
    if np.any(s_values < 0):
        raise ValueError("times must be nonnegative")
    idx = np.floor(n * s_values + 1e-9).astype(np.int64)
    order = np.argsort(idx, kind="stable")
    raw = _reference_batch(
        int(idx.max()), idx[order], int(replicas), seed_from(rng), int(first_replica),
        law.ccdf, law.kappa, law.tail_coeff,
    )
    out = np.empty(raw.shape, dtype=np.float64)
    out[:, order] = raw * reference_scale(kappa, tail_const, n)
    return out


# =============================================================================
# Constants
# =============================================================================


def c0_closed_form(kappa: float, m: float) -> float:
    """Published closed form ``2 Gamma(kappa) / ((m-1)(m+1)^(kappa-1))``."""
    return 2.0 * gamma(kappa) / ((m - 1.0) * (m + 1.0) ** (kappa - 1.0))


def compute_Cstar(kappa: float, m: float, C0: float) -> float:
    """``(C0 |Gamma(1-kappa)|)^(-1/kappa) 2^(-(kappa-1)/kappa) ((m-1)/m)^(-2/kappa)``."""
    if not 1.0 < kappa < 2.0 or not m > 1.0 or not C0 > 0.0:
        raise ValueError("need kappa in (1, 2), m > 1 and C0 > 0")
    return (
        (C0 * abs(gamma(1.0 - kappa))) ** (-1.0 / kappa)
        * 2.0 ** (-(kappa - 1.0) / kappa)
        * ((m - 1.0) / m) ** (-2.0 / kappa)
    )


def walk_scale(kappa: float, tail_const: float, n: int) -> float:
    """``a(n) / n`` with ``a(n) = (tail_const n)^(1/kappa)``."""
    return (tail_const * n) ** (1.0 / kappa) / n


def samples_to_csv(samples, s_values, path) -> None:
    """Long-format dump: one ``(replica, s, H_s)`` row per value."""
    samples = np.asarray(samples)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "s", "value"])
        for r in range(samples.shape[0]):
            for q, s in enumerate(s_values):
                w.writerow([r, s, samples[r, q]])


