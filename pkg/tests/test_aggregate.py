import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgareid.aggregate import (Aggregator, global_average_pool, global_average_pool_backward, lap_backward,
                              lap_forward, lga_backward, lga_cascade, lga_forward, propagate)
from lgareid.gridgraph import build_grid_graph, distances_from


def dense_oracle(w, h, r):
    """D^-1/2 (A+I) D^-1/2 assembled from scratch (no GridGraph involvement)."""
    k = w * h
    rc = np.array([(i // w, i % w) for i in range(k)], dtype=float)
    dist = np.sqrt(((rc[:, None, :] - rc[None, :, :]) ** 2).sum(-1))
    a_tilde = ((dist < r) | np.eye(k, dtype=bool)).astype(float)
    d = a_tilde.sum(1)
    return a_tilde / np.sqrt(d)[:, None] / np.sqrt(d)[None, :], a_tilde


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_identity_on_single_node():
    g = build_grid_graph(1, 1, 1.5)
    x = np.array([[[2.5]], [[0.0]]])
    np.testing.assert_array_equal(lga_forward(x, g), x)
    np.testing.assert_array_equal(lap_forward(x, g), x)


def test_impulse_on_two_by_two():
    g = build_grid_graph(2, 2, 1.5)
    x = np.array([[[4.0, 0.0], [0.0, 0.0]]])
    np.testing.assert_array_equal(lga_forward(x, g), np.ones((1, 2, 2)))
    np.testing.assert_array_equal(lap_forward(x, g), np.ones((1, 2, 2)))
    np.testing.assert_array_equal(global_average_pool(x), [1.0])


def test_relu_clamps_negative_sums():
    g = build_grid_graph(2, 2, 1.5)
    np.testing.assert_array_equal(lga_forward(np.full((1, 2, 2), -4.0), g), np.zeros((1, 2, 2)))


def test_shape_mismatch():
    g = build_grid_graph(3, 3, 1.5)
    with pytest.raises(ValueError):
        lga_forward(np.zeros((2, 3, 4)), g)
    with pytest.raises(ValueError):
        lap_forward(np.zeros((2, 4, 3)), g)
    with pytest.raises(ValueError):
        lga_backward(np.zeros((2, 3, 3)), g, np.zeros((1, 3, 3)))


def test_lap_constant_map():
    g = build_grid_graph(5, 4, 1.5)
    np.testing.assert_allclose(lap_forward(np.full((3, 4, 5), 2.5), g), 2.5, rtol=0, atol=1e-15)


def test_gap_examples():
    np.testing.assert_array_equal(global_average_pool(np.full((3, 4, 4), 1.5)), [1.5] * 3)
    x = np.array([[[7.0]], [[-2.0]]])
    np.testing.assert_array_equal(global_average_pool(x), [7.0, -2.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 16), st.sampled_from([1.0, 1.5, 2.5]),
       st.integers(0, 2**32 - 1))
def test_sparse_matches_dense_oracle(w, h, c, r, seed):
    x = np.random.default_rng(seed).normal(size=(c, h, w))
    dense, _ = dense_oracle(w, h, r)
    expect = np.maximum(x.reshape(c, -1) @ dense.T, 0).reshape(c, h, w)
    np.testing.assert_allclose(lga_forward(x, build_grid_graph(w, h, r)), expect, rtol=0, atol=1e-12)


def test_lap_matches_dense_oracle():
    rng = np.random.default_rng(3)
    for w, h in [(4, 3), (8, 8), (1, 5)]:
        _, a_tilde = dense_oracle(w, h, 1.5)
        mean_op = a_tilde / a_tilde.sum(1, keepdims=True)
        x = rng.normal(size=(6, h, w))
        g = build_grid_graph(w, h, 1.5)
        np.testing.assert_allclose(lap_forward(x, g), (x.reshape(6, -1) @ mean_op.T).reshape(x.shape), atol=1e-13)
        up = rng.normal(size=x.shape)
        np.testing.assert_allclose(lap_backward(x, g, up), (up.reshape(6, -1) @ mean_op).reshape(x.shape),
                                   atol=1e-13)


def test_backward_scalar_cases():
    g = build_grid_graph(1, 1, 1.5)
    assert lga_backward(np.full((1, 1, 1), 2.0), g, np.full((1, 1, 1), 3.0)).item() == 3.0
    assert lga_backward(np.full((1, 1, 1), -2.0), g, np.full((1, 1, 1), 3.0)).item() == 0.0
    g3 = build_grid_graph(3, 3, 1.5)
    x = np.random.default_rng(0).normal(size=(2, 3, 3))
    np.testing.assert_array_equal(lga_backward(x, g3, np.zeros_like(x)), 0.0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    g = build_grid_graph(3, 3, 1.5)
    x = rng.normal(size=(2, 3, 3))
    # stay away from ReLU kinks
    assert np.abs(propagate(x, g)).min() > 1e-3
    up = rng.normal(size=x.shape)
    num = central_diff(lambda z: float((lga_forward(z, g) * up).sum()), x)
    ana = lga_backward(x, g, up)
    assert np.abs(ana - num).max() / np.abs(num).max() < 1e-6


def test_gap_backward():
    up = np.array([[3.0, -1.0]])
    out = global_average_pool_backward(up, (2, 2))
    assert out.shape == (1, 2, 2, 2)
    np.testing.assert_array_equal(out[0, 0], 0.75)
    np.testing.assert_array_equal(out[0, 1], -0.25)


def test_cascade_depth_one_equals_forward():
    g = build_grid_graph(5, 5, 1.5)
    x = np.random.default_rng(1).normal(size=(3, 5, 5))
    np.testing.assert_array_equal(lga_cascade(x, g, 1), lga_forward(x, g))


def test_cascade_rejects_zero_depth():
    g = build_grid_graph(2, 2, 1.5)
    with pytest.raises(ValueError):
        lga_cascade(np.zeros((1, 2, 2)), g, 0)
    with pytest.raises(ValueError):
        Aggregator(g, "lga", 0)


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
def test_impulse_support_is_distance_ball(depth):
    g = build_grid_graph(9, 7, 1.5)
    for src in [0, g.index(3, 4), g.index(6, 8), g.index(0, 4)]:
        x = np.zeros((1, 7, 9))
        x.reshape(-1)[src] = 1.0
        support = set(np.flatnonzero(lga_cascade(x, g, depth).reshape(-1) > 0))
        ball = set(np.flatnonzero(distances_from(g, src) <= depth))
        assert support == ball


def test_corner_receptive_field_depth_two():
    g = build_grid_graph(20, 20, 1.5)
    rng = np.random.default_rng(5)
    x = rng.uniform(0.5, 1.5, size=(1, 20, 20))
    base = lga_cascade(x, g, 2)[0, 0, 0]
    for r in range(20):
        for c in range(20):
            y = x.copy()
            y[0, r, c] += 1.0
            changed = lga_cascade(y, g, 2)[0, 0, 0] != base
            assert changed == (max(r, c) <= 2)


def test_channel_permutation_equivariance():
    g = build_grid_graph(6, 4, 1.5)
    x = np.random.default_rng(2).normal(size=(5, 4, 6))
    perm = np.array([3, 0, 4, 1, 2])
    np.testing.assert_array_equal(lga_cascade(x[perm], g, 2), lga_cascade(x, g, 2)[perm])


def test_batch_split_does_not_change_results():
    g = build_grid_graph(6, 4, 1.5)
    x = np.random.default_rng(2).normal(size=(4, 5, 4, 6))
    whole = lga_cascade(x, g, 3)
    parts = np.concatenate([lga_cascade(x[:1], g, 3), lga_cascade(x[1:], g, 3)])
    np.testing.assert_array_equal(whole, parts)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3), st.integers(0, 2**32 - 1))
def test_linear_on_nonnegative_cone(a, b, seed):
    rng = np.random.default_rng(seed)
    g = build_grid_graph(5, 4, 1.5)
    x, y = rng.uniform(0, 2, (2, 3, 4, 5))
    np.testing.assert_allclose(lga_forward(a * x + b * y, g), a * lga_forward(x, g) + b * lga_forward(y, g),
                               rtol=1e-12, atol=1e-12)


def test_aggregator_has_no_parameters_and_roundtrips():
    g = build_grid_graph(4, 4, 1.5)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 4))
    up = rng.normal(size=x.shape)
    for kind in ("lga", "lap", "none"):
        agg = Aggregator(g, kind, 2)
        assert agg.parameters() == []
        out = agg.forward(x)
        assert out.shape == x.shape
        num = central_diff(lambda z: float((Aggregator(g, kind, 2).forward(z) * up).sum()), x)
        np.testing.assert_allclose(agg.backward(up), num, atol=1e-7)
