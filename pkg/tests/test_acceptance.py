"""Acceptance gate: the twelve criteria at full size with fixed seeds.

Each test runs the corresponding checks at the default parameters
(kappa = 1.5, m = 2, constant l), prints one PASS/FAIL line and fails
when any non-diagnostic check misses its tolerance or the runtime
budget is exceeded.  Seeds are fixed once in ``ExperimentConfig``.
"""

from __future__ import annotations

import time

import pytest

from stablewalk import experiments as ex

from .conftest import record_criterion

pytestmark = pytest.mark.slow

CFG = ex.ExperimentConfig()


def _gate(number: int, title: str, checks, seconds: float, budget: float, names=None) -> None:
    matching = [c for c in checks if names is None or any(c.name.startswith(n) for n in names)]
    selected = [c for c in matching if not c.diagnostic]
    assert selected, "no checks selected"
    failed = [c for c in selected if not c.passed]
    in_time = seconds <= budget
    ok = not failed and in_time
    # failing checks first, then matching diagnostics (exact values the targets disagree with)
    shown = (failed or selected)[:4] + [c for c in matching if c.diagnostic][:2]
    detail = "; ".join(c.line() for c in shown)
    line = f"[{'PASS' if ok else 'FAIL'}] C{number:<2} {title} ({seconds:.0f} s of {budget:.0f} s) :: {detail}"
    record_criterion(number, line)
    for c in matching:
        print("   ", c.line())
    assert in_time, f"runtime {seconds:.0f} s exceeds {budget:.0f} s"
    assert not failed, "\n".join(c.line() for c in failed)


def _run(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def height_checks():
    return _run(ex.check_height_identities, CFG, 100, 10**6)


def test_c01_fx_height_identity(height_checks):
    checks, sec = height_checks
    _gate(1, "F^X weighted heights equal walk heights, 100 x 1e6 steps", checks, sec, 300, ["fx_"])


def test_c02_fr_height_identity(height_checks):
    checks, sec = height_checks
    _gate(2, "F^R heights equal F heights on the same trajectories", checks, sec, 300, ["fr_"])


def test_c03_optional_line_means():
    checks, sec = _run(ex.check_optional_line_means, CFG, 10**5, (1, 3))
    _gate(3, "E_1[L^1] = 1 and E_3[L^1] = 3 within 3 SE, 1e5 excursions", checks, sec, 120)


def test_c04_mean_matrix():
    checks, sec = _run(ex.check_mean_matrix, CFG, 10**6, 5, 200)
    _gate(4, "m_ij within 2% and eigenvector identities within 1e-8", checks, sec, 300)


def test_c05_spine_excursion():
    checks, sec = _run(ex.check_spine_chain, CFG, 10**6, 5)
    _gate(5, "spine excursion sum = m/(m-1) and occupation ~ m^-j/j", checks, sec, 180, ["spine_beta_sum", "spine_occupation"])


def test_c06_construction_equivalence():
    checks, sec = _run(ex.check_construction_equivalence, CFG, 10**5)
    _gate(6, "chi-square of (beta(w_1), nu(w_0)) between v1 and v2, p > 0.001", checks, sec, 600, ["construction_equivalence"])


def test_c07_L1_hat_tail():
    checks, sec = _run(ex.check_L1_hat_tail, CFG, 10**6)
    _gate(7, "P_hat_1(L^1 > x): index 0.5 +- 0.1, constant within factor 2 of C_kappa l", checks, sec, 1800)


def test_c08_V_tail():
    checks, sec = _run(ex.check_V_tail, CFG, 10**6)
    _gate(8, "V: index 0.5 +- 0.1 and constant linear in beta within factor 1.5", checks, sec, 900, ["V_index", "V_linearity", "V_ratio_gamma"])


def test_c09_N_tail():
    checks, sec = _run(ex.check_N_tail, CFG, 10**6)
    _gate(9, "N: index 0.5 +- 0.1, constant within factor 1.5 of kappa l/(m(kappa-1))", checks, sec, 300)


def test_c10_many_to_one():
    checks, sec = _run(ex.check_many_to_one, CFG, 10**6, (2, 3))
    _gate(10, "many-to-one formula, 3 functions at depths 2 and 3 within 3 SE", checks, sec, 600)


def test_c11_scaling_trend():
    (checks, _), sec = _run(ex.check_scaling_trend, CFG)
    _gate(11, "KS(t=1) non-increasing over n = 2^12..2^18, <= 1 inversion, final <= 0.08", checks, sec, 7200, ["scaling_ks_trend"])


def test_c12_martingales():
    checks, sec = _run(ex.check_martingales, CFG, 10**5, 6, 8)
    _gate(12, "E_i[Z_n] = i (n <= 6) and E[W_k] = 1 (k <= 8) within 3 SE", checks, sec, 300)
