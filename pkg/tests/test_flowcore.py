import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridflow import flowcore, net, tasks
from hybridflow.numkit import DomainError, RngState


def test_interpolate_endpoints_and_midpoint():
    x0, z1 = np.array([[0.3, -1.0]]), np.array([[2.0, 5.0]])
    assert np.array_equal(flowcore.interpolate(x0, z1, 0.0), x0)
    assert np.array_equal(flowcore.interpolate(x0, z1, 1.0), z1)
    mid = flowcore.interpolate(np.zeros((1, 2)), np.array([[2.0, -2.0]]), 0.5)
    assert np.array_equal(mid, [[1.0, -1.0]])


@pytest.mark.parametrize("t", [-0.01, 1.01])
def test_interpolate_rejects_t_outside_unit_interval(t):
    with pytest.raises(DomainError):
        flowcore.interpolate(np.zeros((1, 2)), np.ones((1, 2)), t)


def test_time_pairs_degenerate_limit():
    r, t = flowcore.sample_time_pairs(RngState(0), flowcore.TimeSamplingConfig(p_degenerate=1.0), 1000)
    assert np.array_equal(r, t)


def test_time_pairs_never_degenerate_and_gap_is_one_third():
    r, t = flowcore.sample_time_pairs(RngState(1), flowcore.TimeSamplingConfig(p_degenerate=0.0), 10000)
    assert np.all(r < t)
    # E|a - b| = 1/3 for independent uniforms
    assert abs(np.mean(t - r) / (1 / 3) - 1.0) < 0.05


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(["uniform", "logit_normal"]))
@settings(max_examples=40, deadline=None)
def test_time_pairs_are_ordered_in_unit_interval(seed, p, dist):
    cfg = flowcore.TimeSamplingConfig(p_degenerate=p, distribution=dist)
    pair = flowcore.sample_time_pair(RngState(seed), cfg)
    assert 0.0 <= pair.r <= pair.t <= 1.0


def test_time_pair_validation():
    with pytest.raises(DomainError):
        flowcore.TimePair(0.6, 0.5)
    with pytest.raises(DomainError):
        flowcore.TimeSamplingConfig(p_degenerate=1.5)


def test_path_batch_rederives_bit_for_bit():
    rng = RngState(2)
    data = tasks.draw(tasks.cond_gmm2d(), rng, 64)
    b = flowcore.make_path_batch(data, rng)
    assert np.array_equal(b.z_t, (1.0 - b.t[:, None]) * b.x0 + b.t[:, None] * b.z1)
    assert np.array_equal(b.v_star, b.z1 - b.x0)


def test_meanflow_target_examples():
    v = np.array([[1.0, 0.0]])
    assert np.array_equal(flowcore.meanflow_target(v, [0.4], [0.4], [[9.0, -7.0]]), v)
    out = flowcore.meanflow_target(v, [0.25], [0.75], [[2.0, 2.0]])
    assert np.array_equal(out, [[0.0, -1.0]])


def test_meanflow_target_from_oracle_derivative_is_closed_form():
    oracle = tasks.constant_oracle([1.0, -0.5], 0.2)
    rng = RngState(4)
    n = 200
    z = rng.normal((n, 2))
    t = 0.05 + 0.95 * rng.uniform(n)
    r = t * rng.uniform(n) * 0.99
    v = tasks.oracle_instantaneous_velocity(oracle, z, t, None)
    du = tasks.oracle_average_velocity_dt(oracle, z, r, t, None, v)
    got = flowcore.meanflow_target(v, r, t, du)
    assert np.max(np.abs(got - tasks.oracle_average_velocity(oracle, z, r, t, None))) <= 1e-6


def _gauss_batch(n, seed, p_deg=0.5, **kw):
    task = tasks.cond_gauss(**kw)
    rng = RngState(seed)
    return task, flowcore.make_path_batch(tasks.draw(task, rng, n), rng,
                                          flowcore.TimeSamplingConfig(p_degenerate=p_deg))


def test_degenerate_batch_loss_is_plain_regression():
    task, b = _gauss_batch(128, 5, p_deg=1.0)
    p = net.init_params(net.NetworkArch(task.dim, task.cond_dim, (16,)), RngState(0))
    loss, _ = flowcore.loss_and_grads(p, b)
    u = p(b.z_t, b.r, b.t, b.c)
    assert loss == pytest.approx(np.mean((u - b.v_star) ** 2), rel=1e-14)


def test_zero_network_initial_loss_matches_moments():
    task, b = _gauss_batch(20000, 6, dim=2, cond_dim=0, mean=[0.0, 0.0], sigma=1.0)
    p = net.zero_params(net.NetworkArch(2, 0, (8,)))
    loss, _ = flowcore.loss_and_grads(p, b)
    # E|z1 - x0|^2 / d = Var(x0) + 1
    assert abs(loss / 2.0 - 1.0) < 0.03


def test_gradient_treats_target_as_constant():
    rng = RngState(7)
    task, b = _gauss_batch(32, 7)
    p = net.init_params(net.NetworkArch(task.dim, task.cond_dim, (12, 12)), rng)
    _, grads = flowcore.loss_and_grads(p, b)
    _, du = net.forward_jvp(p, b.z_t, b.r, b.t, b.c, net.InputTangent(b.v_star, 0.0, 1.0))
    target = flowcore.meanflow_target(b.v_star, b.r, b.t, du)
    flat, h = p.flat(), 1e-6
    for i in rng.integers(p.size, 10):
        e = np.zeros_like(flat)
        e[i] = h
        lp = np.mean((p.with_flat(flat + e)(b.z_t, b.r, b.t, b.c) - target) ** 2)
        lm = np.mean((p.with_flat(flat - e)(b.z_t, b.r, b.t, b.c) - target) ** 2)
        fd = (lp - lm) / (2 * h)
        assert abs(grads.flat()[i] - fd) <= 1e-5 * max(abs(fd), 1e-3)


def test_training_reduces_loss():
    task = tasks.cond_gauss()
    rng = RngState(8)
    p = net.init_params(net.NetworkArch(task.dim, task.cond_dim, (32, 32)), rng)
    s = net.AdamState.zeros_like(p, lr=3e-3)
    losses = []
    for _ in range(500):
        b = flowcore.make_path_batch(tasks.draw(task, rng, 256), rng)
        loss, p, s = flowcore.unified_loss_step(p, b, s)
        losses.append(loss)
    assert np.mean(losses[-25:]) < 0.5 * np.mean(losses[:5])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    task, b = _gauss_batch(8, 9)
    p = net.init_params(net.NetworkArch(task.dim, task.cond_dim, (4,)), RngState(0))
    bad = flowcore.PathBatch(b.x0, b.z1, b.c, b.r, b.t, b.z_t, np.full_like(b.v_star, np.inf))
    with pytest.raises(FloatingPointError):
        flowcore.unified_loss_step(p, bad, net.AdamState.zeros_like(p))
