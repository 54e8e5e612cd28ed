import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablewalk._rng import stream_key, uniform
from stablewalk.gw_forest import LazyForest
from stablewalk.heavy_tail import make_offspring_law
from stablewalk.spine import m_entry
from stablewalk.walk import (
    MarkedForest,
    mean_matrix_mc,
    negative_multinomial_pmf,
    run_walk,
    sample_children_local_times,
    sample_optional_line,
    step_choice,
    walk_heights_batch,
)

LAW = make_offspring_law(1.5, 2.0, 2.0 / 3.0)


# =============================================================================
# One step
# =============================================================================


def test_step_choice_nu_one():
    u = np.linspace(0, 1, 30001)[:-1]
    j = np.array([step_choice(x, 1, 2.0) for x in u])
    assert np.mean(j == 0) == pytest.approx(2 / 3, abs=1e-4)
    assert np.mean(j == 1) == pytest.approx(1 / 3, abs=1e-4)


def test_step_frequencies_nu_three():
    key = stream_key(np.uint64(4), np.uint64(0))
    n = 10**6
    j = np.array([step_choice(uniform(key, np.uint64(t)), 3, 2.0) for t in range(n)])
    for value, p in [(0, 0.4), (1, 0.2), (2, 0.2), (3, 0.2)]:
        assert abs(np.mean(j == value) - p) <= 3 * math.sqrt(p * (1 - p) / n)


@given(st.floats(0, 1, exclude_max=True), st.integers(0, 50))
def test_step_choice_range(u, nu):
    assert 0 <= step_choice(u, nu, 2.0) <= nu


# =============================================================================
# Trial mechanics
# =============================================================================


def test_single_child_pmf():
    assert negative_multinomial_pmf([0], 1, 2.0) == pytest.approx(2 / 3)
    assert negative_multinomial_pmf([1], 1, 2.0) == pytest.approx(2 / 9)
    assert negative_multinomial_pmf([2], 1, 2.0) == pytest.approx(2 / 27)
    assert sample_children_local_times(1, 0, 2.0, 1).size == 0


def test_joint_pmf_two_children():
    n = 10**6
    hits = sum(np.array_equal(sample_children_local_times(2, 2, 2.0, s), [1, 1]) for s in range(n))
    p = negative_multinomial_pmf([1, 1], 2, 2.0)
    assert abs(hits / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_pmf_sums_to_one():
    total = sum(negative_multinomial_pmf([a, b], 3, 2.0) for a in range(120) for b in range(120))
    assert total == pytest.approx(1.0, abs=1e-9)


# =============================================================================
# Trajectories
# =============================================================================


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3000))
def test_trajectory_invariants(seed, n):
    traj = run_walk(LazyForest(LAW, seed), n, seed + 1)
    h = traj.heights
    assert h[0] == 0 and h.size == n + 1
    steps = np.diff(h)
    assert np.all(np.abs(steps) <= 1)
    # a zero step happens only when leaving a root for the next tree
    zero = np.flatnonzero(steps == 0)
    assert np.all(h[zero] == 0)
    assert np.all(traj.tree[traj.pos[zero + 1]] == traj.tree[traj.pos[zero]] + 1)
    # local time counts downward entries
    down = traj.pos[1:][steps == 1]
    assert np.array_equal(np.bincount(down, minlength=traj.n_vertices)[traj.parent >= 0], traj.beta_array[traj.parent >= 0])
    assert np.all(traj.nu[traj.child_index >= 1] >= 0)


def test_walk_is_reproducible():
    a = run_walk(LazyForest(LAW, 3), 5000, 4).heights
    b = run_walk(LazyForest(LAW, 3), 5000, 4).heights
    assert np.array_equal(a, b)


def test_batch_matches_single_walks():
    from stablewalk._rng import stream_key as sk

    h, hmax, roots = walk_heights_batch(LAW, 4000, 5, 77, [0, 1000, 4000])
    for r in range(5):
        traj = run_walk(LazyForest(LAW, int(sk(np.uint64(77), np.uint64(2 * r)))), 4000, np.uint64(sk(np.uint64(77), np.uint64(2 * r + 1))))
        assert h[r].tolist() == traj.heights[[0, 1000, 4000]].tolist()
        assert hmax[r, -1] == traj.heights.max()
        assert roots[r, -1] == 1 + np.sum(traj.heights[1:] == 0)
    h2, _, _ = walk_heights_batch(LAW, 4000, 2, 77, [0, 1000, 4000], first_replica=3)
    assert np.array_equal(h2, h[3:])


def test_returns_to_root_generation_scale():
    ns = [2**12, 2**14, 2**16, 2**18]
    _, _, roots = walk_heights_batch(LAW, ns[-1], 400, 5, ns)
    slope = np.polyfit(np.log(ns), np.log(roots.mean(axis=0)), 1)[0]
    # heights live on the scale n^(1 - 1/kappa), so level 0 is occupied about n^(1/kappa) times
    assert abs(slope - 1 / 1.5) <= 0.1


def test_marked_forest_lex_order():
    mf = MarkedForest.from_spec({(): 1, (1,): 2, (2,): 1, (1, 1): 1})
    assert [mf.vertex_id(v).path for v in mf.lex_order] == [(), (1,), (1, 1), (2,)]


# =============================================================================
# Optional line and mean matrix
# =============================================================================


def test_optional_line_mean_type2():
    s = sample_optional_line(LAW, 2, 10**5, 8)
    v = s.valid().L1
    assert s.n_capped == 0
    assert abs(v.mean() - 2) <= 3 * v.std() / math.sqrt(v.size)


def test_optional_line_exact_on_light_tail():
    from stablewalk.heavy_tail import offspring_law_from_pmf

    law = offspring_law_from_pmf([0.2, 0.2, 0.3, 0.3])
    for i in (1, 3):
        v = sample_optional_line(law, i, 10**5, 9 + i).L1
        assert abs(v.mean() - i) <= 3 * v.std() / math.sqrt(v.size)


def test_optional_line_leaf_law():
    from stablewalk.heavy_tail import offspring_law_from_pmf

    s = sample_optional_line(offspring_law_from_pmf([1.0]), 1, 100, 1)
    assert np.all(s.L1 == 0) and np.all(s.B1 == 0)


def test_mean_matrix_against_closed_form():
    est, se = mean_matrix_mc(LAW, 3, 4, 10**5, 21)
    exact = np.array([[m_entry(i, j, 2.0) for j in range(1, 5)] for i in range(1, 4)])
    assert np.all(np.abs(est - exact) <= 4 * se + 1e-12)
