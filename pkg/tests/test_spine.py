import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stablewalk.heavy_tail import make_offspring_law, offspring_law_from_pmf, size_biased
from stablewalk.spine import (
    eigen_data,
    l1_spine_batch,
    m_entry,
    p_hat,
    p_hat_row,
    reweighted_spine_step,
    sibling_sum_batch,
    sibling_tail_const,
    spine_chain,
    spine_chain_batch,
    spine_expectation,
    spine_v1_batch,
    spine_v2_batch,
    tail_constants,
)

LAW = make_offspring_law(1.5, 2.0, 2.0 / 3.0)


# =============================================================================
# Mean matrix and spine transitions
# =============================================================================


def test_m_entry_values():
    assert m_entry(1, 1, 2.0) == pytest.approx(4 / 9, rel=1e-14)
    assert m_entry(1, 2, 2.0) == pytest.approx(4 / 27, rel=1e-14)


def test_row_action_on_b():
    j = np.arange(1, 400)
    b = 0.5 * j
    assert float((m_entry(1, j, 2.0) * b).sum()) == pytest.approx(0.5, abs=1e-14)


@given(st.integers(1, 60), st.sampled_from([1.5, 2.0, 3.0]))
def test_p_hat_is_shifted_negative_binomial(i, m):
    j = np.arange(1, 40)
    assert np.allclose(p_hat(i, j, m), stats.nbinom.pmf(j - 1, i + 1, m / (m + 1)), rtol=1e-10, atol=1e-300)


@settings(deadline=None)
@given(st.integers(1, 30))
def test_p_hat_row_sums_to_one(i):
    assert p_hat_row(i, 2.0).sum() == pytest.approx(1.0, abs=1e-10)


def test_eigen_identities():
    ed = eigen_data(2.0, 200)
    assert np.max(np.abs(ed.a @ ed.M - ed.a)) <= 1e-8
    assert np.max(np.abs(ed.M @ ed.b - ed.b)) <= 1e-8
    j = np.arange(1, 201)
    assert np.allclose(ed.stationary, 0.5 * j * 2.0**-j, atol=1e-16)
    assert np.allclose(ed.stationary @ ed.P_hat, ed.stationary, atol=1e-12)


def test_spine_expectations_by_linear_solve():
    # Kac: E_1[tau] = 1 / pi_1 = 4, E_1[sum beta] = E_pi[beta] / pi_1 = 12
    assert spine_expectation(lambda i, j: 1.0, 2.0) == pytest.approx(4.0, abs=1e-9)
    assert spine_expectation(lambda i, j: j, 2.0) == pytest.approx(12.0, abs=1e-9)


def test_chain_monte_carlo_matches_kac():
    tau, bsum, occ = spine_chain_batch(1, 2.0, 10**5, 3)
    assert np.all(tau > 0)
    assert abs(tau.mean() - 4) <= 3 * tau.std() / math.sqrt(tau.size)
    assert abs(bsum.mean() - 12) <= 3 * bsum.std() / math.sqrt(bsum.size)
    assert occ.sum() == tau.sum()


def test_single_chain():
    c = spine_chain(3, 2.0, 5)
    assert c.types[0] == 3 and c.types[-1] == 1 and np.all(c.types[1:-1] > 1)
    assert c.tau1 == c.types.size - 1
    with pytest.raises(ValueError):
        spine_chain(0, 2.0)


# =============================================================================
# Spinal constructions
# =============================================================================


def _empirical_rows(types, k):
    return types[:, k]


def test_v1_and_v2_types_match_matrix_powers():
    depth = 3
    n = 10**5
    v1 = spine_v1_batch(1, depth, LAW, n, 11)
    v2 = spine_v2_batch(depth, LAW, n, 12)
    assert v2.n_capped == 0
    P = eigen_data(2.0, 200).P_hat
    row = np.eye(200)[0]
    for k in range(1, depth + 1):
        row = row @ P
        for batch in (v1, v2):
            t = batch.types[:, k]
            for j in (1, 2, 3):
                p = row[j - 1]
                assert abs(np.mean(t == j) - p) <= 4 * math.sqrt(p * (1 - p) / n)
    assert np.all(v2.types[:, 1:] >= 1)


def test_v2_spine_offspring_is_size_biased():
    v2 = spine_v2_batch(2, LAW, 10**5, 13)
    sb = size_biased(LAW)
    nu = v2.nu[:, 0]
    for k in (1, 2, 3):
        p = float(sb.pmf(k))
        assert abs(np.mean(nu == k) - p) <= 4 * math.sqrt(p * (1 - p) / nu.size)


def test_reweighted_step_matches_p_hat():
    est = reweighted_spine_step(2, LAW, 10**5, 14)
    exact = p_hat(2, np.arange(1, 11), 2.0)
    assert np.all(np.abs(est["p_beta"] - exact) <= 4 * est["p_beta_se"] + 1e-12)


def test_supercritical_precondition():
    with pytest.raises(ValueError):
        spine_v1_batch(1, 2, offspring_law_from_pmf([0.0, 1.0]), 10)


# =============================================================================
# Sibling sums and tail constants
# =============================================================================


@pytest.mark.parametrize("beta", [1, 2, 3])
def test_V_zero_mass(beta):
    # P(V = 0) = E[((m+1)/(m+nu_hat))^beta] summed over the size-biased law
    sb = size_biased(LAW)
    k = np.arange(1, 2_000_000)
    exact = float((sb.pmf(k) * (3.0 / (2.0 + k)) ** beta).sum())
    V, N = sibling_sum_batch(beta, LAW, 10**6, 15 + beta)
    p = np.mean(V == 0)
    assert abs(p - exact) <= 3 * math.sqrt(exact * (1 - exact) / V.size) + 1e-6
    assert np.all(N >= 0)


def test_sibling_tail_constants():
    c = sibling_tail_const(np.array([1, 2, 3]), 1.5, 2.0, 2.0 / 3.0)
    assert np.allclose(c, [0.5117, 0.7675, 0.9594], atol=1e-4)
    assert c[1] / c[0] == pytest.approx(1.5)
    assert c[2] / c[0] == pytest.approx(1.875)
    assert sibling_tail_const(1, 1.5, 2.0, 1.0) == pytest.approx(2.6587 / (2 * math.sqrt(3)), abs=1e-4)


def test_tail_constants_closed_forms():
    t = tail_constants(1.5, 2.0, 1.0)
    assert t["c0_closed"] == pytest.approx(1.02333, abs=1e-5)
    assert t["c_kappa_closed"] == pytest.approx(3.0700, abs=1e-4)
    assert t["v_linear_unit"] == pytest.approx(0.7675, abs=1e-4)
    assert t["n_hat"] == pytest.approx(1.5)
    assert t["c0_spine"] == pytest.approx(t["c_kappa_spine"] / 3)
    scaled = tail_constants(1.5, 2.0, 2.0 / 3.0)
    assert scaled["c_kappa_closed"] == pytest.approx(t["c_kappa_closed"] * 2 / 3)


def test_N_tail_constant_exact():
    sb = size_biased(LAW)
    x = 10**4
    assert sb.sf(x + 1) * x**0.5 == pytest.approx(1.0, rel=0.05)


def test_L1_spine_sampler_basic():
    s = l1_spine_batch(LAW, 2000, 16, budget=10**4)
    assert np.all(s.L1 >= 1)
    assert np.all(s.tau1 >= 1)
    again = l1_spine_batch(LAW, 2000, 16, budget=10**4)
    assert np.array_equal(s.L1, again.L1)
    tail = l1_spine_batch(LAW, 1000, 16, budget=10**4, first_replica=1000)
    assert np.array_equal(tail.L1, s.L1[1000:])
