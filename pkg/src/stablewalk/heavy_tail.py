"""Regularly varying offspring laws, scale sequences and tail estimators.

The working family puts explicit masses on small integers and a pure
power tail ``P(X = k) = c k^-(kappa+1)`` beyond them.  With atoms at 0 and
1 this gives exact zeta-function expressions for the mean and the
complementary CDF, so ``kappa``, the mean ``m`` and the tail constant
``C_l = c / kappa`` can be dialled independently inside a feasible region.
The same representation is closed under size-biasing, which lowers the
tail index by one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba as nb
import numpy as np
from numpy.typing import NDArray
from scipy.special import zeta

from ._rng import _INT_CLAMP, seed_from, stream_key, uniform

TABLE_SIZE = 10**6

__all__ = [
    "InfeasibleLawError",
    "DegenerateSampleError",
    "OffspringLaw",
    "PowerTail",
    "TailEstimate",
    "feasible_tail_coeff",
    "make_offspring_law",
    "critical_offspring_law",
    "offspring_law_from_pmf",
    "sample_offspring",
    "scale_seq",
    "hill_estimate",
    "hill_table",
    "size_biased",
    "compute_psi",
]


class InfeasibleLawError(ValueError):
    """Raised when (kappa, mean, tail_const) admits no law in the family."""


class DegenerateSampleError(ValueError):
    """Raised when the top order statistics carry no tail information."""


# =============================================================================
# Law representation
# =============================================================================


def _hurwitz(s: float, q):
    return zeta(s, np.asarray(q, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Law on the nonnegative integers with explicit atoms and a power tail.

    ``atoms[k]`` is the mass at ``k`` for ``k < len(atoms)``; beyond that
    the mass is ``tail_coeff * k ** -(kappa + 1)``.  Finite laws have
    ``tail_coeff == 0`` and ``kappa == inf``.
    """

    kappa: float
    mean: float
    tail_const: float
    atoms: tuple[float, ...]
    tail_coeff: float
    table_size: int = TABLE_SIZE
    ccdf: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ccdf", self._build_ccdf())
        self.ccdf.setflags(write=False)

    def _build_ccdf(self) -> NDArray[np.float64]:
        n_atoms = len(self.atoms)
        atoms = np.asarray(self.atoms, dtype=np.float64)
        # suffix sums of the atoms: P(X >= k) restricted to k < n_atoms
        suffix = np.concatenate([np.cumsum(atoms[::-1])[::-1], [0.0]])
        if self.tail_coeff <= 0.0:
            return suffix
        size = max(self.table_size, n_atoms)
        k = np.arange(size + 1, dtype=np.float64)
        out = self.tail_coeff * _hurwitz(self.kappa + 1.0, np.maximum(k, n_atoms))
        out[:n_atoms] += suffix[:n_atoms]
        return out

    # --- exact distribution functions ------------------------------------

    @property
    def has_tail(self) -> bool:
        return self.tail_coeff > 0.0

    @property
    def mean_is_finite(self) -> bool:
        return math.isfinite(self.mean)

    def pmf(self, k):
        """Exact mass at integer(s) ``k``."""
        k = np.asarray(k)
        n_atoms = len(self.atoms)
        atoms = np.asarray(self.atoms + (0.0,), dtype=np.float64)
        kk = np.maximum(k, 1).astype(np.float64)
        tail = self.tail_coeff * kk ** (-(self.kappa + 1.0)) if self.has_tail else 0.0 * kk
        out = np.where(k < n_atoms, atoms[np.clip(k, 0, n_atoms)], tail)
        return np.where(k < 0, 0.0, out)

    def tail_ge(self, k):
        """Exact ``P(X >= k)`` for integer(s) ``k``."""
        k = np.asarray(k, dtype=np.int64)
        size = self.ccdf.shape[0] - 1
        inside = self.ccdf[np.clip(k, 0, size)]
        if not self.has_tail:
            return np.where(k <= 0, 1.0, np.where(k > size, 0.0, inside))
        beyond = self.tail_coeff * _hurwitz(self.kappa + 1.0, np.maximum(k, size).astype(np.float64))
        return np.where(k <= 0, 1.0, np.where(k > size, beyond, inside))

    def sf(self, x):
        """Exact ``P(X > x)`` for real ``x``."""
        x = np.asarray(x, dtype=np.float64)
        return self.tail_ge(np.floor(x).astype(np.int64) + 1)

    # --- sampling --------------------------------------------------------

    def sample(self, rng=None, size=None):
        """Draw from the law; ``rng`` is a seed or ``numpy.random.Generator``."""
        n = 1 if size is None else int(np.prod(size))
        out = _sample_batch(seed_from(rng), n, self.ccdf, self.kappa, self.tail_coeff)
        return int(out[0]) if size is None else out.reshape(size)

    # --- serialization ---------------------------------------------------

    def to_record(self) -> dict:
        return {
            "kappa": self.kappa,
            "mean": self.mean,
            "tail_const": self.tail_const,
            "atoms": list(self.atoms),
            "tail_coeff": self.tail_coeff,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_record(cls, record: dict) -> "OffspringLaw":
        return cls(
            kappa=float(record["kappa"]),
            mean=float(record["mean"]),
            tail_const=float(record["tail_const"]),
            atoms=tuple(float(a) for a in record["atoms"]),
            tail_coeff=float(record["tail_coeff"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "OffspringLaw":
        return cls.from_record(json.loads(text))


@dataclass(frozen=True)
class PowerTail:
    """Pure Pareto tail ``P(X > x) = min(1, const * x^-kappa)``."""

    kappa: float
    const: float = 1.0

    def sf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, self.const * x ** (-self.kappa))


# =============================================================================
# Construction
# =============================================================================


def feasible_tail_coeff(kappa: float, mean: float) -> tuple[float, float]:
    """Interval of admissible ``c`` for the two-atom family."""
    t1 = float(zeta(kappa)) - 1.0
    t0 = float(zeta(kappa + 1.0)) - 1.0
    return max(0.0, (mean - 1.0) / (t1 - t0)), mean / t1


def _two_atom_law(kappa: float, mean: float, tail_const: float) -> OffspringLaw:
    c = kappa * tail_const
    t1 = float(zeta(kappa)) - 1.0
    t0 = float(zeta(kappa + 1.0)) - 1.0
    p1 = mean - c * t1
    p0 = 1.0 - p1 - c * t0
    lo, hi = feasible_tail_coeff(kappa, mean)
    if p1 < 0.0 or p0 < 0.0:
        which = "P(nu=1) >= 0" if p1 < 0.0 else "P(nu=0) >= 0"
        raise InfeasibleLawError(
            f"constraint {which} violated for kappa={kappa}, mean={mean}, "
            f"tail_const={tail_const}; feasible tail_const in "
            f"[{lo / kappa:.6g}, {hi / kappa:.6g}] (tail_coeff c in [{lo:.6g}, {hi:.6g}])"
        )
    return OffspringLaw(kappa, mean, tail_const, (p0, p1), c)


def make_offspring_law(kappa: float, mean: float, tail_const: float) -> OffspringLaw:
    """Law with atoms at 0, 1 and ``P(X = k) = kappa*tail_const*k^-(kappa+1)``."""
    if not 1.0 < kappa < 2.0:
        raise ValueError(f"kappa must lie in (1, 2), got {kappa}")
    if not mean > 1.0:
        raise ValueError(f"mean must exceed 1, got {mean}")
    if not tail_const > 0.0:
        raise ValueError(f"tail_const must be positive, got {tail_const}")
    return _two_atom_law(kappa, mean, tail_const)


def critical_offspring_law(kappa: float, tail_const: float) -> OffspringLaw:
    """Mean-one member of the family, used for the reference height process."""
    if not 1.0 < kappa < 2.0:
        raise ValueError(f"kappa must lie in (1, 2), got {kappa}")
    if not tail_const > 0.0:
        raise ValueError(f"tail_const must be positive, got {tail_const}")
    return _two_atom_law(kappa, 1.0, tail_const)


def offspring_law_from_pmf(pmf: Sequence[float]) -> OffspringLaw:
    """Finitely supported law; ``pmf[k]`` is the mass at ``k``."""
    p = np.asarray(pmf, dtype=np.float64)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("pmf must be nonnegative and sum to 1")
    mean = float(np.dot(np.arange(p.size), p))
    return OffspringLaw(math.inf, mean, 0.0, tuple(p.tolist()), 0.0)


def size_biased(law: OffspringLaw) -> OffspringLaw:
    """Law of ``k`` with mass ``k P(X = k) / m``; tail index drops by one."""
    m = law.mean
    atoms = tuple(k * a / m for k, a in enumerate(law.atoms))
    if law.has_tail:
        kappa = law.kappa - 1.0
        coeff = law.tail_coeff / m
        return OffspringLaw(kappa, math.inf, coeff / kappa, atoms, coeff, law.table_size)
    second = float(sum(k * k * a for k, a in enumerate(law.atoms)))
    return OffspringLaw(math.inf, second / m, 0.0, atoms, 0.0)


def compute_psi(law: OffspringLaw, t: float) -> float:
    """``E[sum over children of lambda^-t]`` at ``lambda = m``, i.e. ``m^(1-t)``."""
    return law.mean ** (1.0 - t)


# =============================================================================
# Sampling kernels
# =============================================================================


@nb.njit(cache=True)
def draw_offspring(u, ccdf, kappa, coeff):
    """Largest ``k`` with ``P(X >= k) >= u``.

    Table lookup below the cached range, midpoint-rule Pareto inversion
    ``P(X >= k) ~ coeff (k - 1/2)^-kappa / kappa`` above it.
    """
    top = ccdf.shape[0] - 1
    if u <= ccdf[top]:
        if coeff <= 0.0:
            return top
        x = np.floor((kappa * u / coeff) ** (-1.0 / kappa) + 0.5)
        if x > _INT_CLAMP:
            x = _INT_CLAMP
        k = np.int64(x)
        return k if k > top else top
    lo = 0
    hi = top
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if ccdf[mid] >= u:
            lo = mid
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def _sample_batch(seed, n, ccdf, kappa, coeff):
    out = np.empty(n, dtype=np.int64)
    key = stream_key(seed, 0)
    for i in range(n):
        out[i] = draw_offspring(uniform(key, i), ccdf, kappa, coeff)
    return out


def sample_offspring(law: OffspringLaw, rng=None, size=None):
    """Draw offspring counts by inverse CDF (see :func:`draw_offspring`)."""
    return law.sample(rng, size)


# =============================================================================
# Scale sequence
# =============================================================================


def scale_seq(law: OffspringLaw | PowerTail, n: int) -> float:
    """``a_n = inf{x >= 0 : P(X > x) <= 1/n}``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if n == 1:
        return 0.0
    if isinstance(law, PowerTail):
        return (law.const * n) ** (1.0 / law.kappa)
    target = 1.0 / n
    # P(X > k) = ccdf[k + 1] is nonincreasing in k; the infimum is an integer
    ccdf = law.ccdf
    if ccdf[-1] <= target:
        k = int(np.searchsorted(-ccdf, -target, side="left"))
        return float(max(k - 1, 0))
    lo = ccdf.shape[0] - 2
    hi = max(lo + 2, int(2 * (law.tail_coeff * n / law.kappa) ** (1.0 / law.kappa)) + 2)
    while law.tail_ge(hi + 1) > target:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if law.tail_ge(mid + 1) <= target:
            hi = mid
        else:
            lo = mid
    return float(hi)


# =============================================================================
# Hill estimator
# =============================================================================


@dataclass(frozen=True)
class TailEstimate:
    """Hill estimate of ``P(X > x) ~ const_hat * x^-index_hat``."""

    index_hat: float
    const_hat: float
    k_used: int
    std_err: float

    def to_record(self) -> dict:
        return {
            "index_hat": self.index_hat,
            "const_hat": self.const_hat,
            "k_used": self.k_used,
            "std_err": self.std_err,
        }


def hill_estimate(samples, k: int | None = None) -> TailEstimate:
    """Hill estimator on the ``k`` largest order statistics (default ``floor(sqrt(n))``)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if k is None:
        k = math.isqrt(n)
    if k < 10:
        raise ValueError("k must be at least 10")
    if k >= n:
        raise ValueError("k must be smaller than the sample size")
    if np.any(x < 0):
        raise ValueError("samples must be nonnegative")
    top = np.partition(x, n - k - 1)[n - k - 1 :]
    threshold = top[0]
    if threshold <= 0.0:
        raise DegenerateSampleError("order statistic X_(k+1) is zero")
    logs = np.log(top[1:] / threshold).sum()
    if logs <= 0.0:
        raise DegenerateSampleError("top k+1 order statistics are equal")
    index = k / logs
    const = (k / n) * threshold**index
    return TailEstimate(index, const, k, index / math.sqrt(k))


def hill_table(samples, k: int | None = None) -> dict[int, TailEstimate]:
    """Hill estimates at ``k/2``, ``k`` and ``2k`` to expose bias drift."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if k is None:
        k = math.isqrt(x.size)
    out = {}
    for kk in (k // 2, k, 2 * k):
        if 10 <= kk < x.size:
            out[kk] = hill_estimate(x, kk)
    return out
