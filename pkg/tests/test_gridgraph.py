import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgareid.gridgraph import build_grid_graph, distances_from, graph_distance


def brute_adjacency(w, h, r):
    """All-pairs distance check; returns {i: sorted neighbours incl. self}."""
    coords = [(i // w, i % w) for i in range(w * h)]
    adj = {}
    for i, (ri, ci) in enumerate(coords):
        adj[i] = [j for j, (rj, cj) in enumerate(coords) if i == j or np.hypot(ri - rj, ci - cj) < r]
    return adj


def bfs_oracle(adj, i, j):
    frontier, seen, d = {i}, {i}, 0
    while j not in frontier:
        frontier = {v for u in frontier for v in adj[u]} - seen
        seen |= frontier
        d += 1
    return d


def test_single_node():
    g = build_grid_graph(1, 1, 1.5)
    assert g.adjacency(0) == [(0, 1.0)]
    assert g.degrees.tolist() == [1]


def test_two_by_two_is_complete():
    g = build_grid_graph(2, 2, 1.5)
    assert g.degrees.tolist() == [4, 4, 4, 4]
    for i in range(4):
        assert g.adjacency(i) == [(j, 0.25) for j in range(4)]


def test_twenty_by_twenty_degrees():
    g = build_grid_graph(20, 20, 1.5)
    adj = brute_adjacency(20, 20, 1.5)
    assert g.degrees[g.index(5, 5)] == len(adj[g.index(5, 5)]) == 9
    assert g.degrees[g.index(0, 0)] == len(adj[0]) == 4
    assert g.degrees[g.index(0, 7)] == 6


@pytest.mark.parametrize("r", [1.5, 1.9, 2.0])
def test_eight_connected_degree_profile(r):
    g = build_grid_graph(5, 4, r)
    deg = g.degrees.reshape(4, 5)
    assert deg[1:-1, 1:-1].tolist() == [[9] * 3] * 2
    assert {deg[0, 0], deg[0, -1], deg[-1, 0], deg[-1, -1]} == {4}
    assert set(deg[0, 1:-1]) == set(deg[1:-1, 0]) == {6}


@pytest.mark.parametrize("w,h", [(0, 3), (3, 0), (-1, 2)])
def test_rejects_bad_dimensions(w, h):
    with pytest.raises(ValueError):
        build_grid_graph(w, h, 1.5)


@pytest.mark.parametrize("r", [0.0, -1.0, float("nan")])
def test_rejects_bad_radius(r):
    with pytest.raises(ValueError):
        build_grid_graph(3, 3, r)


def test_huge_radius_gives_complete_graph():
    g = build_grid_graph(3, 2, 100.0)
    assert (g.degrees == 6).all()


def test_deterministic_and_immutable():
    a, b = build_grid_graph(6, 5, 1.5), build_grid_graph(6, 5, 1.5)
    assert list(a.edges()) == list(b.edges())
    with pytest.raises(ValueError):
        a.weights[0, 0] = 2.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.sampled_from([1.0, 1.5, 2.5]))
def test_matches_brute_force(w, h, r):
    g = build_grid_graph(w, h, r)
    adj = brute_adjacency(w, h, r)
    for i in range(w * h):
        got = g.adjacency(i)
        assert [j for j, _ in got] == adj[i]
        assert g.degrees[i] == len(got)
        for j, wt in got:
            assert wt == 1.0 / (math.sqrt(len(adj[i])) * math.sqrt(len(adj[j])))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from([1.0, 1.5, 2.5]))
def test_weights_bitwise_symmetric_and_spectrally_bounded(w, h, r):
    g = build_grid_graph(w, h, r)
    dense = g.dense_weights()
    assert np.array_equal(dense, dense.T)
    # power iteration on the symmetric matrix against the dense eigensolver
    v = np.random.default_rng(0).normal(size=g.num_nodes)
    for _ in range(500):
        v = dense @ v
        v /= np.linalg.norm(v)
    lam_power = abs(v @ dense @ v)
    lam_dense = np.abs(np.linalg.eigvalsh(dense)).max()
    assert lam_power <= 1 + 1e-9
    assert lam_dense <= 1 + 1e-9


def test_graph_distance_examples():
    g = build_grid_graph(3, 3, 1.5)
    assert graph_distance(g, 4, 4) == 0
    assert graph_distance(g, g.index(0, 0), g.index(2, 2)) == 2
    path = build_grid_graph(5, 1, 1.5)
    assert graph_distance(path, 0, 4) == 4


def test_graph_distance_rejects_bad_index():
    g = build_grid_graph(3, 3, 1.5)
    with pytest.raises(ValueError):
        graph_distance(g, 0, 9)
    with pytest.raises(ValueError):
        graph_distance(g, -1, 0)


@pytest.mark.parametrize("w,h,r", [(7, 5, 1.5), (6, 6, 1.1), (5, 4, 2.5)])
def test_graph_distance_matches_bfs_oracle(w, h, r):
    g = build_grid_graph(w, h, r)
    adj = brute_adjacency(w, h, r)
    for i, j in itertools.product(range(w * h), repeat=2):
        assert graph_distance(g, i, j) == bfs_oracle(adj, i, j)
    for i in range(w * h):
        assert distances_from(g, i).tolist() == [bfs_oracle(adj, i, j) for j in range(w * h)]


def test_chebyshev_distance_for_eight_connected():
    g = build_grid_graph(9, 7, 1.5)
    for i in range(g.num_nodes):
        ri, ci = divmod(i, 9)
        expect = [max(abs(ri - rj), abs(ci - cj)) for rj, cj in (divmod(j, 9) for j in range(g.num_nodes))]
        assert distances_from(g, i).tolist() == expect


def test_edge_dump_format():
    g = build_grid_graph(2, 2, 1.5)
    buf = io.StringIO()
    g.dump_edges(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 16
    assert lines[0] == "0 0 0.25"
    parsed = [tuple(map(float, ln.split())) for ln in lines]
    assert parsed == sorted(parsed)
    g3 = build_grid_graph(3, 3, 1.5)
    buf = io.StringIO()
    g3.dump_edges(buf)
    i, j, w = buf.getvalue().splitlines()[0].split()
    assert float(w) == g3.adjacency(0)[0][1]
    assert len(w.replace(".", "").lstrip("0")) <= 17
