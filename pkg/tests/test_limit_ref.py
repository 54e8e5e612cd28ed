import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from mpmath import mp, gamma as mgamma, mpf

from stablewalk.limit_ref import (
    c0_closed_form,
    compute_Cstar,
    critical_gw_height,
    height_bruteforce,
    heights_from_lukasiewicz,
    lukasiewicz,
    parents_from_heights,
    reference_H_samples,
    reference_scale,
    walk_scale,
)


# =============================================================================
# Discrete height process
# =============================================================================


def test_two_leaf_tree():
    S = lukasiewicz([2, 0, 0])
    assert np.diff(S).tolist() == [1, -1, -1]
    assert heights_from_lukasiewicz(S)[:3].tolist() == [0, 1, 1]


def test_forced_unit_offspring():
    S = lukasiewicz(np.ones(20, dtype=int))
    assert heights_from_lukasiewicz(S)[:20].tolist() == list(range(20))


def test_stack_matches_bruteforce_exhaustively():
    for n in range(1, 9):
        for inc in itertools.product((-1, 0, 1, 2), repeat=n):
            S = np.concatenate([[0], np.cumsum(inc)])
            assert np.array_equal(heights_from_lukasiewicz(S), height_bruteforce(S))


@given(st.lists(st.integers(0, 4), min_size=1, max_size=200))
def test_heights_rebuild_the_first_tree(xi):
    S = lukasiewicz(xi)
    done = np.flatnonzero(S == -1)
    assume(done.size > 0)
    k = int(done[0])
    H = heights_from_lukasiewicz(S)[:k]
    assert H[0] == 0 and np.all(H[1:] >= 1) and np.all(np.diff(H) <= 1)
    parent = parents_from_heights(H)
    assert np.array_equal(np.bincount(parent[1:], minlength=k), np.array(xi[:k]))


def test_reference_path_validates():
    path = critical_gw_height(1.5, 0.25, 5000, 3)
    path.validate()
    assert path.height.size == 5000


# =============================================================================
# Batched samples
# =============================================================================


def test_reference_samples_basic():
    x = reference_H_samples(1.5, 4096, 200, 5, s_values=(0.0, 0.5, 1.0))
    assert x.shape == (200, 3)
    assert np.all(x[:, 0] == 0) and np.all(x >= 0)
    y = reference_H_samples(1.5, 4096, 100, 5, s_values=(1.0, 0.0, 0.5), first_replica=100)
    assert np.array_equal(y, x[100:, [2, 0, 1]])


def test_reference_samples_match_single_path():
    from stablewalk._rng import stream_key
    from stablewalk.heavy_tail import critical_offspring_law, draw_offspring
    from stablewalk._rng import uniform

    law = critical_offspring_law(1.5, 0.25)
    key = stream_key(np.uint64(9), np.uint64(0))
    xi = np.array([draw_offspring(uniform(key, np.uint64(k)), law.ccdf, law.kappa, law.tail_coeff) for k in range(1000)])
    H = heights_from_lukasiewicz(lukasiewicz(xi))
    x = reference_H_samples(1.5, 1000, 1, 9, s_values=(0.3, 1.0))
    assert x[0].tolist() == pytest.approx((H[[300, 1000]] * reference_scale(1.5, 0.25, 1000)).tolist())


# =============================================================================
# Constants
# =============================================================================


def test_c0_and_cstar_against_mpmath():
    mp.dps = 40
    k, m = mpf(3) / 2, mpf(2)
    c0 = 2 * mgamma(k) / ((m - 1) * (m + 1) ** (k - 1))
    assert c0_closed_form(1.5, 2.0) == pytest.approx(float(c0), rel=1e-12)
    assert c0_closed_form(1.5, 2.0) == pytest.approx(1.02333, abs=1e-5)
    cs = (c0 * abs(mgamma(1 - k))) ** (-1 / k) * 2 ** (-(k - 1) / k) * ((m - 1) / m) ** (-2 / k)
    assert compute_Cstar(1.5, 2.0, float(c0)) == pytest.approx(float(cs), rel=1e-12)
    assert compute_Cstar(1.5, 2.0, float(c0)) == pytest.approx(0.847, abs=1e-3)
    assert abs(math.gamma(-0.5)) == pytest.approx(2 * math.sqrt(math.pi))


@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_cstar_decreasing_in_c0(a, b):
    if a == b:
        return
    lo, hi = sorted((a, b))
    assert compute_Cstar(1.5, 2.0, hi) < compute_Cstar(1.5, 2.0, lo)


def test_cstar_preconditions():
    with pytest.raises(ValueError):
        compute_Cstar(2.5, 2.0, 1.0)
    with pytest.raises(ValueError):
        compute_Cstar(1.5, 1.0, 1.0)


def test_scales():
    assert walk_scale(1.5, 1.0, 2**18) == pytest.approx(0.015625, rel=1e-12)
    assert reference_scale(1.5, 1.0, 2**18) == pytest.approx((2 * math.sqrt(math.pi)) ** (2 / 3) / 64)
