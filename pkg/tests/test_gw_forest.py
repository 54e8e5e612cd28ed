import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stablewalk.gw_forest import LazyForest, VertexId, children, dfs_preorder, offspring_count
from stablewalk.heavy_tail import make_offspring_law, offspring_law_from_pmf

LAW = make_offspring_law(1.5, 2.0, 2.0 / 3.0)

paths = st.lists(st.integers(1, 4), max_size=5).map(tuple)
vertices = st.builds(VertexId, st.integers(1, 5), paths)


def test_memoised_queries():
    f = LazyForest(LAW, 11)
    u = VertexId(2, (1, 3))
    assert offspring_count(f, u) == offspring_count(f, u)


@settings(max_examples=50, deadline=None)
@given(st.lists(vertices, min_size=1, max_size=30), st.randoms())
def test_query_order_does_not_matter(us, rnd):
    a, b = LazyForest(LAW, 5), LazyForest(LAW, 5)
    shuffled = list(us)
    rnd.shuffle(shuffled)
    first = {u: a.offspring_count(u) for u in us}
    second = {u: b.offspring_count(u) for u in shuffled}
    assert first == second


def test_children():
    leaf = offspring_law_from_pmf([1.0])
    f = LazyForest(leaf, 1)
    assert children(f, VertexId(1)) == []
    three = LazyForest(offspring_law_from_pmf([0, 0, 0, 1.0]), 1)
    kids = children(three, VertexId(1, (2,)))
    assert len(kids) == 3 and all(k.parent() == VertexId(1, (2,)) for k in kids)
    with pytest.raises(ValueError):
        VertexId(1).parent()
    with pytest.raises(ValueError):
        VertexId(1).child(0)


def test_offspring_chi_square_over_distinct_vertices():
    f = LazyForest(LAW, 3)
    # 10^6 distinct vertices: children 1..1000 of 1000 roots
    nu = np.array([f.offspring_count(VertexId(t, (j,))) for t in range(1, 1001) for j in range(1, 1001)])
    edges = [0, 1, 2, 3, 5, 10, 30]
    obs = [np.sum((nu >= a) & (nu < b)) for a, b in zip(edges[:-1], edges[1:])] + [np.sum(nu >= edges[-1])]
    probs = [LAW.tail_ge(a) - LAW.tail_ge(b) for a, b in zip(edges[:-1], edges[1:])] + [LAW.tail_ge(edges[-1])]
    assert stats.chisquare(obs, np.array(probs) * nu.size).pvalue > 1e-3


def test_lexicographic_order_on_seven_vertex_tree():
    # root with children 1 (two kids), 2 (leaf), 3 (one kid)
    kids = {(): [1, 2, 3], (1,): [1, 2], (2,): [], (3,): [1]}
    tree = lambda u: [u.child(j) for j in kids.get(u.path, [])]
    order = [u.path for u in dfs_preorder([VertexId(1)], tree)]
    assert order == [(), (1,), (1, 1), (1, 2), (2,), (3,), (3, 1)]
    assert order == [u.path for u in sorted(VertexId(1, p) for p in order)]


@given(vertices, vertices)
def test_vertex_order_is_lexicographic(u, v):
    assert (u < v) == ((u.tree, u.path) < (v.tree, v.path))
    if u.is_ancestor_of(v):
        assert u < v
