import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asynczo.core import BlockLayout, BlockVector, DivergenceError, RngStream, axpy_block, sample_block_gaussian
from asynczo.estimators import (
    BOOTSTRAP,
    AgentState,
    one_point_centralized,
    residual_async,
    residual_centralized,
    two_point_async,
    two_point_biased_centralized,
    two_point_unbiased_centralized,
)
from asynczo.objectives import ObjectiveHandle, QuadraticObjective, quadratic_handle

from conftest import mc_mean_and_se


def handle(fn, dims):
    return ObjectiveHandle(fn, BlockLayout(dims))


def within_3se(samples, target):
    mean, se = mc_mean_and_se(samples)
    return np.all(np.abs(mean - target) <= 3 * se), mean, se


def test_one_point_zero_function(rng):
    h = handle(lambda v: 0.0, [3])
    x = BlockVector(h.layout, [1.0, 2.0, 3.0])
    assert np.all(one_point_centralized(h, x, 0.1, rng) == 0.0)
    assert h.query_count == 1


def test_one_point_constant_function_is_zero_mean():
    h = handle(lambda v: 2.0, [2])
    x = BlockVector.zeros(h.layout)
    rng = RngStream(1, 0)
    first = one_point_centralized(h, x, 0.5, rng)
    assert np.any(first != 0.0)
    ok, mean, se = within_3se([one_point_centralized(h, x, 0.5, rng) for _ in range(1_000_000)], 0.0)
    assert ok, (mean, se)


def test_one_point_quadratic_recovers_gradient():
    h = quadratic_handle(QuadraticObjective(np.eye(2)), BlockLayout([2]))
    x = BlockVector(h.layout, [1.0, 0.0])
    rng = RngStream(2, 0)
    ok, mean, se = within_3se([one_point_centralized(h, x, 0.01, rng) for _ in range(1_000_000)], [1.0, 0.0])
    assert ok, (mean, se)


def test_two_point_unbiased_linear():
    b = np.array([1.0, -2.0, 0.5])
    h = handle(lambda v: float(b @ v), [3])
    x = BlockVector(h.layout, [0.3, 0.1, -0.4])
    rng = RngStream(3, 0)
    ok, mean, se = within_3se([two_point_unbiased_centralized(h, x, 0.1, rng) for _ in range(200_000)], b)
    assert ok, (mean, se)


def test_two_point_unbiased_constant_and_mu_invariance():
    h = handle(lambda v: 4.0, [2])
    x = BlockVector.zeros(h.layout)
    for seed in range(20):
        assert np.all(two_point_unbiased_centralized(h, x, 0.3, RngStream(seed)) == 0.0)
    b = np.array([2.0, 1.0])
    lin = handle(lambda v: float(b @ v), [2])
    a = two_point_unbiased_centralized(lin, x, 0.01, RngStream(9))
    c = two_point_unbiased_centralized(lin, x, 10.0, RngStream(9))
    assert np.allclose(a, c, rtol=1e-9)
    assert lin.query_count == 4


def test_two_point_biased_quadratic_identity():
    rng = RngStream(4, 0)
    quad = QuadraticObjective.random(3, rng)
    quad = QuadraticObjective(quad.A)  # pure quadratic form
    h = quadratic_handle(quad, BlockLayout([3]))
    x = BlockVector(h.layout, [0.5, -1.0, 2.0])
    est_rng, u_rng = RngStream(5, 0), RngStream(5, 0)
    for _ in range(50):
        est = two_point_biased_centralized(h, x, 0.2, est_rng)
        u = u_rng.standard_normal(3)
        assert np.allclose(est, (quad.A @ x.values) @ u * u, rtol=1e-9, atol=1e-12)
    ok, mean, se = within_3se([two_point_biased_centralized(h, x, 0.2, rng) for _ in range(200_000)], quad.A @ x.values)
    assert ok, (mean, se)


def test_two_point_biased_constant_and_l1_symmetry(rng):
    const = handle(lambda v: 1.5, [4])
    x0 = BlockVector.zeros(const.layout)
    assert np.all(two_point_biased_centralized(const, x0, 0.1, rng) == 0.0)
    l1 = handle(lambda v: float(np.abs(v).sum()), [4])
    for _ in range(20):
        assert np.all(two_point_biased_centralized(l1, x0, 0.1, rng) == 0.0)


def test_residual_centralized_contract(rng):
    h = handle(lambda v: 3.0, [2])
    x = BlockVector.zeros(h.layout)
    est, value = residual_centralized(h, x, None, 0.1, rng)
    assert est is BOOTSTRAP and value == 3.0 and h.query_count == 1
    est, _ = residual_centralized(h, x, value, 0.1, rng)
    assert np.all(est == 0.0)


def test_residual_centralized_unbiased_on_quadratic():
    quad = QuadraticObjective(np.diag([1.0, 3.0]), [0.5, -1.0])
    h = quadratic_handle(quad, BlockLayout([2]))
    x = BlockVector(h.layout, [1.0, 0.5])
    rng = RngStream(6, 0)
    samples = []
    for _ in range(1_000_000):
        _, prev = residual_centralized(h, x, None, 0.1, rng)
        est, _ = residual_centralized(h, x, prev, 0.1, rng)
        samples.append(est)
    ok, mean, se = within_3se(samples, quad.gradient(x.values))
    assert ok, (mean, se)


def test_residual_async_bootstrap_then_estimate(half_norm_sq, rng):
    x = BlockVector(half_norm_sq.layout, [1.0, 1.0])
    st0 = AgentState(0, alpha=0.1, mu=0.05)
    est, st1 = residual_async(half_norm_sq, x, st0, rng, iteration=3)
    assert est is BOOTSTRAP
    assert st1.bootstrap_done and st1.last_update_iter == 3 and st1.last_value is not None
    assert half_norm_sq.query_count == 1
    est, st2 = residual_async(half_norm_sq, x, st1, rng, iteration=7)
    assert est is not BOOTSTRAP and est.agent == 0
    assert st2.last_update_iter == 7 and half_norm_sq.query_count == 2


def test_residual_async_single_agent_matches_centralized():
    h = quadratic_handle(QuadraticObjective(np.diag([1.0, 2.0])), BlockLayout([2]))
    x = BlockVector(h.layout, [0.4, -0.3])
    a_rng, c_rng = RngStream(7, 1), RngStream(7, 1)
    st = AgentState(0, 0.1, 0.2)
    prev = None
    for _ in range(20):
        est, st = residual_async(h, x, st, a_rng)
        c_est, prev_new = residual_centralized(h, x, prev, 0.2, c_rng)
        if est is BOOTSTRAP:
            assert c_est is BOOTSTRAP
        else:
            assert np.allclose(est.as_full.values, c_est, rtol=1e-12)
        prev = prev_new
        x = BlockVector(h.layout, x.values * 0.9)


def test_residual_async_unbiased_small_example(half_norm_sq):
    # f = 0.5||x||^2, x = [1, 1]: the block-0 gradient of the smoothed function is 1
    x = BlockVector(half_norm_sq.layout, [1.0, 1.0])
    rng = RngStream(8, 0)
    samples = []
    for _ in range(200_000):
        _, st = residual_async(half_norm_sq, x, AgentState(0, 0.1, 0.05), rng)
        est, _ = residual_async(half_norm_sq, x, st, rng)
        samples.append(est.block[0])
    ok, mean, se = within_3se(samples, 1.0)
    assert ok, (mean, se)


def test_residual_async_constant_with_interleaving(rng):
    h = handle(lambda v: -1.25, [2, 3])
    x = BlockVector(h.layout, rng.standard_normal(5))
    st = AgentState(0, 0.1, 0.1)
    _, st = residual_async(h, x, st, rng)
    for _ in range(10):
        x = axpy_block(x, 0.7, sample_block_gaussian(h.layout, 1, rng))
        est, st = residual_async(h, x, st, rng)
        assert np.all(est.as_full.values == 0.0)


@given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.integers(0, 2**31), st.data())
@settings(max_examples=40, deadline=None)
def test_async_estimates_are_block_sparse(dims, seed, data):
    layout = BlockLayout(dims)
    quad = QuadraticObjective(np.eye(layout.total_dim))
    h = quadratic_handle(quad, layout)
    agent = data.draw(st.integers(0, len(dims) - 1))
    rng = RngStream(seed)
    x = BlockVector(layout, rng.standard_normal(layout.total_dim))
    mask = np.ones(layout.total_dim, bool)
    mask[layout.block_slice(agent)] = False
    _, s = residual_async(h, x, AgentState(agent, 0.1, 0.1), rng)
    est, _ = residual_async(h, x, s, rng)
    assert np.all(est.as_full.values[mask] == 0.0)
    est, _ = two_point_async(h, x, AgentState(agent, 0.1, 0.1), rng)
    assert np.all(est.as_full.values[mask] == 0.0)


def test_two_point_async_constant_and_linear():
    b = np.array([1.0, -1.0, 2.0])
    lin = handle(lambda v: float(b @ v), [1, 2])
    const = handle(lambda v: 9.0, [1, 2])
    rng = RngStream(10, 0)
    x = BlockVector(lin.layout, [0.1, 0.2, 0.3])
    est, _ = two_point_async(const, x, AgentState(1, 0.1, 0.1), rng)
    assert np.all(est.block == 0.0)
    samples = [two_point_async(lin, x, AgentState(1, 0.1, 0.1), rng)[0].block for _ in range(200_000)]
    ok, mean, se = within_3se(samples, b[1:])
    assert ok, (mean, se)


def test_two_point_async_query_accounting(half_norm_sq, rng):
    x = BlockVector(half_norm_sq.layout, [1.0, -1.0])
    st = AgentState(1, 0.1, 0.1)
    for k in range(25):
        est, st = two_point_async(half_norm_sq, x, st, rng, iteration=k)
        assert est is not BOOTSTRAP
    assert half_norm_sq.query_count == 50


def test_two_point_alternating_baseline_one_query_per_activation(half_norm_sq, rng):
    x = BlockVector(half_norm_sq.layout, [1.0, -1.0])
    st = AgentState(0, 0.1, 0.1)
    kinds = []
    for k in range(10):
        est, st = two_point_async(half_norm_sq, x, st, rng, iteration=k, baseline="alternating")
        kinds.append(est is BOOTSTRAP)
        assert half_norm_sq.query_count == k + 1
    assert kinds == [True, False] * 5


def test_divergence_guard(rng):
    h = handle(lambda v: 1e15 * float(v[0] > 0), [1])
    st = AgentState(0, 0.1, 1e-3)
    x = BlockVector(h.layout, [-1e-9])
    _, st = residual_async(h, x, st, rng)
    with pytest.raises(DivergenceError) as info:
        for k in range(200):
            _, st = residual_async(h, BlockVector(h.layout, [1.0]), st.__class__(0, 0.1, 1e-3, 0.0, st.last_direction, 0, True), rng, iteration=k, trial=4)
    assert info.value.trial == 4


def test_async_variance_exceeds_centralized_with_interleaving():
    # other agents move between the two queries of agent 0, inflating the residual
    layout = BlockLayout([1, 1])
    quad = QuadraticObjective(np.eye(2))
    h = quadratic_handle(quad, layout)
    x = BlockVector(layout, [1.0, 1.0])
    mu = 0.1
    rng = RngStream(12, 0)
    n = 100_000
    async_sq = np.empty(n)
    central_sq = np.empty(n)
    block1 = BlockLayout([1, 1])
    for k in range(n):
        # agent 1 updated its block by a random step after agent 0's last query
        x_prev = BlockVector(block1, [1.0, 1.0 + 0.5 * rng.standard_normal()])
        _, st = residual_async(h, x_prev, AgentState(0, 0.1, mu), rng)
        est, _ = residual_async(h, x, st, rng)
        async_sq[k] = est.squared_norm()
        _, prev = residual_centralized(h, x, None, mu, rng)
        c_est, _ = residual_centralized(h, x, prev, mu, rng)
        central_sq[k] = c_est @ c_est
    a_mean, a_se = mc_mean_and_se(async_sq)
    c_mean, c_se = mc_mean_and_se(central_sq)
    assert a_mean - 3 * a_se > c_mean + 3 * c_se
