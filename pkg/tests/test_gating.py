import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from timeop.data import TrainView
from timeop.gating import (channel_dots, compute_contexts, fuse_scales, gate, gate_backward, init_mlp,
                           mlp_backward, mlp_forward, route_modalities, softmax, softmax_backward,
                           softmax_jacobian)
from toy import DAY, toy_view

finite = st.floats(-50, 50, allow_nan=False)


def test_single_interaction_span_zero():
    view = TrainView(np.array([0, 1, 1]), np.array([0, 0, 1]), np.array([0.0, DAY, 5 * DAY]), 2, 2)
    ctx = compute_contexts(view)
    assert ctx.user_raw[0, 2] == 0.0


def test_recent_fraction_one():
    view = TrainView(np.array([0, 0, 1]), np.array([0, 1, 0]), np.array([99 * DAY, 100 * DAY, 0.0]), 2, 2)
    ctx = compute_contexts(view, window_fraction=0.1)
    assert ctx.user_raw[0, 3] == 1.0 and ctx.user_raw[1, 3] == 0.0


def test_contexts_standardized():
    ctx = compute_contexts(toy_view())
    for table in (ctx.user, ctx.item):
        assert np.abs(table.mean(axis=0)).max() <= 1e-6
        sd = table.std(axis=0)
        assert np.all((np.abs(sd - 1) <= 1e-3) | (sd == 0))


def test_contexts_only_use_given_view():
    view = toy_view()
    a = compute_contexts(view)
    b = compute_contexts(TrainView(view.users, view.items, view.times.copy(), view.n_users, view.n_items))
    np.testing.assert_array_equal(a.user, b.user)


def test_softmax_cases():
    np.testing.assert_allclose(softmax(np.array([[2.0, 2.0, 2.0]]), 0.3), [[1 / 3] * 3])
    np.testing.assert_allclose(softmax(np.array([[1.0, 0.0]]), 0.01), [[1.0, 0.0]], atol=1e-8)
    e = np.e
    np.testing.assert_allclose(softmax(np.array([[1.0, 0.0]]), 1.0), [[e / (e + 1), 1 / (e + 1)]], atol=1e-12)
    with pytest.raises(FloatingPointError):
        softmax(np.array([[np.nan, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.floats(0.05, 5.0), st.floats(0.1, 0.99))
def test_softmax_simplex_and_temperature(z, T, shrink):
    p = softmax(z, T)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
    assert np.all(softmax(z, T * shrink).max(axis=1) >= p.max(axis=1) - 1e-12)


def test_softmax_jacobian_at_uniform():
    K = 4
    np.testing.assert_allclose(softmax_jacobian(np.full(K, 1 / K)), np.eye(K) / K - 1 / K ** 2)


def test_softmax_backward_matches_jacobian():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(1, 3))
    p = softmax(z, 0.7)
    d = rng.normal(size=(1, 3))
    np.testing.assert_allclose(softmax_backward(p, d, 0.7)[0], softmax_jacobian(p[0]) @ d[0] / 0.7, atol=1e-12)


def test_relu_gradient_zero_when_inactive():
    rng = np.random.default_rng(0)
    params = init_mlp(rng, 2, 3, 2, "m")
    params["m.b1"] = np.array([-100.0, -100.0, -100.0])
    logits, cache = mlp_forward(params, "m", rng.normal(size=(5, 2)))
    grads = mlp_backward("m", cache, np.ones_like(logits))
    assert np.all(grads["m.w1"] == 0) and np.all(grads["m.b1"] == 0)


def test_gate_backward_finite_differences():
    rng = np.random.default_rng(2)
    params = init_mlp(rng, 4, 6, 3, "g")
    s = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))
    g, cache = gate(s, params, "g", 0.8)
    grads = gate_backward("g", cache, w)
    for name, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + 1e-6
            hi = (gate(s, params, "g", 0.8)[0] * w).sum()
            value[idx] = old - 1e-6
            lo = (gate(s, params, "g", 0.8)[0] * w).sum()
            value[idx] = old
            fd[idx] = (hi - lo) / 2e-6
        assert np.linalg.norm(grads[name] - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_fuse_scales_cases():
    rng = np.random.default_rng(0)
    reps = rng.normal(size=(3, 4, 2))
    np.testing.assert_array_equal(fuse_scales(reps[:1], np.ones((4, 1))), reps[0])
    onehot = np.tile([1.0, 0.0, 0.0], (4, 1))
    np.testing.assert_array_equal(fuse_scales(reps, onehot), reps[0])
    np.testing.assert_allclose(fuse_scales(reps[:2], np.full((4, 2), 0.5)), (reps[0] + reps[1]) / 2)


def test_route_cases():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(route_modalities(x, np.ones((1, 1))), x)
    xy = np.array([[1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_allclose(route_modalities(xy, np.array([[0.5, 0.5]])), 0.5 * xy)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_score_decomposition(seed, m):
    rng = np.random.default_rng(seed)
    hu, hi = rng.normal(size=(2, 6, m * 3))
    beta = rng.dirichlet(np.ones(m), size=6)
    lhs = (route_modalities(hu, beta) * hi).sum(axis=1)
    rhs = (beta * channel_dots(hu, hi, m)).sum(axis=1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
