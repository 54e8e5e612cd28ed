import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablewalk.gw_forest import LazyForest
from stablewalk.heavy_tail import make_offspring_law, offspring_law_from_pmf
from stablewalk.reduction import (
    build_FR,
    build_FX,
    check_Hl,
    first_generation_data,
    forest_height_process,
    height_process,
    nearest_type1_ancestor,
    optional_lines,
)
from stablewalk.walk import MarkedForest, run_walk, sample_optional_line

LAW = make_offspring_law(1.5, 2.0, 2.0 / 3.0)
CHAIN = MarkedForest.from_spec({(): 1, (1,): 2, (1, 1): 1})


# =============================================================================
# Hand-built forests
# =============================================================================


def test_chain_optional_line():
    s = optional_lines(CHAIN, 0)
    assert (s.L1, s.B1, s.B1_beta_sum) == (1, 2, 3)
    assert [CHAIN.vertex_id(v).path for v in s.L1_list] == [(1, 1)]


def test_two_type1_children():
    mf = MarkedForest.from_spec({(): 1, (1,): 1, (2,): 1})
    s = optional_lines(mf, 0)
    assert s.L1 == s.B1 == 2


def test_chain_FR():
    F = build_FR(CHAIN)
    F.validate(min_length=1)
    a, b = CHAIN.index_of(CHAIN.vertex_id(1)), 2
    assert F.parent[a] == 0 and F.etype[a] == 0 and F.length[a] == 1
    assert F.parent[b] == 0 and F.etype[b] == 1 and F.length[b] == 2
    assert height_process(F).tolist() == [0, 1, 2]
    assert height_process(F, "type1").tolist() == [0, 1]


def test_all_type1_tree_is_unchanged():
    spec = {(): 1, (1,): 1, (2,): 1, (1, 1): 1, (1, 2): 1, (2, 1): 1}
    mf = MarkedForest.from_spec(spec)
    F = build_FR(mf)
    assert np.array_equal(F.parent, mf.parent)
    assert np.all(F.etype == 1) and np.all(F.length[1:] == 1)
    assert np.array_equal(height_process(F), forest_height_process(mf))


def test_zero_local_time_is_dropped():
    mf = MarkedForest.from_spec({(): 1, (1,): 0, (2,): 1})
    assert build_FR(mf).n_vertices == 2


def test_single_root_height():
    F = build_FR(MarkedForest.from_spec({(): 1}))
    assert height_process(F).tolist() == [0]
    with pytest.raises(ValueError):
        height_process(F, "other")


def test_nearest_type1_ancestor():
    assert nearest_type1_ancestor(CHAIN).tolist() == [-1, 0, 0]


def test_FX_single_step_from_leaf_root():
    law = offspring_law_from_pmf([0.5, 0.0, 0.5])
    seed = next(s for s in range(100) if LazyForest(law, s).offspring_count(LazyForest(law, s).root(1)) == 0)
    traj = run_walk(LazyForest(law, seed), 1, 1)
    F = build_FX(traj)
    # the only move from a childless root is to the next root; each time
    # index becomes its own type-1 root of height 0
    assert traj.heights.tolist() == [0, 0]
    assert F.parent.tolist() == [-1, -1] and F.etype.tolist() == [1, 1]
    assert height_process(F).tolist() == [0, 0]


# =============================================================================
# Simulated trajectories
# =============================================================================


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 20000))
def test_height_identities_on_random_walks(seed, n):
    traj = run_walk(LazyForest(LAW, seed), n, seed ^ 0x5A5A)
    FX = build_FX(traj)
    FX.validate()
    assert FX.n_vertices == n + 1
    assert np.array_equal(height_process(FX), traj.heights)
    mf = traj.marked_forest()
    FR = build_FR(mf)
    FR.validate(min_length=1)
    assert np.array_equal(height_process(FR), forest_height_process(mf))
    # weighted heights of type-1 vertices are their generations in F
    t1 = FR.etype == 1
    assert np.array_equal(FR.weighted_depth[t1], mf.depth[FR.source[t1]])


def test_FX_complete_only_drops_last_tree():
    traj = run_walk(LazyForest(LAW, 2), 20000, 3)
    full = build_FX(traj)
    part = build_FX(traj, complete_only=True)
    assert part.n_vertices <= full.n_vertices
    assert np.array_equal(height_process(part), traj.heights[: part.n_vertices])


def test_Hl_estimates():
    s = sample_optional_line(LAW, 1, 10**5, 31)
    rep = check_Hl(s)
    assert abs(rep.mean_nu1 - 1.0) <= 4 * rep.mean_nu1_se
    assert rep.mean_r_sum < np.inf and rep.mu > 0
    with pytest.raises(ValueError):
        check_Hl(s, r=1.2)


def test_first_generation_data_on_chain():
    d = first_generation_data(build_FR(CHAIN))
    assert d["nu1"].tolist() == [1, 0]
    assert d["nu"].tolist() == [2, 0]
    assert d["length_sum"].tolist() == [2, 0]
