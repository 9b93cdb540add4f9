import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridflow import net, samplers, tasks
from hybridflow.numkit import DomainError, RngState, covariance, mean_var
from hybridflow.samplers import CountingField, SamplerSpec

from conftest import constant_params

N = 10000
MU = np.array([1.0, -0.5])
SIGMA = 0.1


@pytest.fixture(scope="module")
def oracle():
    return tasks.constant_oracle(MU, SIGMA)


@pytest.fixture(scope="module")
def z1():
    return RngState(0).normal((N, 2))


NO_C = np.zeros((N, 0))


@pytest.fixture
def trained_like():
    return net.init_params(net.NetworkArch(2, 0, (16, 16)), RngState(3))


def test_spec_defaults_and_labels():
    h = SamplerSpec("hybridflow")
    assert (h.alpha, h.t_refine, h.nfe, h.label) == (0.15, 0.15, 2, "hybridflow[a=0.15]")
    assert SamplerSpec.parse("euler_reflow:16").label == "euler_reflow[K=16]"
    assert SamplerSpec.parse("meanflow_multistep:4").nfe == 4
    assert SamplerSpec.parse("meanflow_1step").nfe == 1
    with pytest.raises(DomainError):
        SamplerSpec("hybridflow", alpha=1.0)
    with pytest.raises(DomainError):
        SamplerSpec("euler_reflow", steps=0)
    with pytest.raises(DomainError):
        SamplerSpec("consistency")


@pytest.mark.parametrize("spec", [
    SamplerSpec("meanflow_1step"), SamplerSpec("euler_reflow", steps=1), SamplerSpec("euler_reflow", steps=7),
    SamplerSpec("meanflow_multistep", steps=1), SamplerSpec("meanflow_multistep", steps=5),
    SamplerSpec("hybridflow", alpha=0.3), SamplerSpec("hybridflow", fresh_noise_renoise=True),
], ids=lambda s: s.label)
def test_nfe_accounting(spec, trained_like):
    field = CountingField(trained_like)
    z = RngState(1).normal((4, 2))
    _, trace = samplers.sample(field, z, np.zeros((4, 0)), spec, rng=RngState(2))
    assert field.calls == trace.nfe == spec.nfe


@pytest.mark.parametrize("spec", [SamplerSpec("meanflow_1step"), SamplerSpec("euler_reflow", steps=5),
                                  SamplerSpec("meanflow_multistep", steps=3), SamplerSpec("hybridflow")],
                         ids=lambda s: s.label)
def test_zero_network_is_a_fixed_point(spec):
    p = net.zero_params(net.NetworkArch(2, 0, (4,)))
    z = RngState(1).normal((6, 2))
    x, trace = samplers.sample(p, z, np.zeros((6, 0)), spec)
    # alpha z + (1 - alpha) z may differ from z in the last bit
    assert np.allclose(x, z, rtol=1e-15, atol=1e-15)
    if spec.mode == "hybridflow":
        assert np.array_equal(trace.state("coarse"), z)
        assert np.allclose(trace.state("renoised"), z, rtol=1e-15, atol=1e-15)


def test_constant_network_shifts_by_constant():
    k = np.array([0.5, -2.0])
    z = RngState(1).normal((6, 2))
    x, _ = samplers.sample_meanflow_1step(constant_params(k), z, np.zeros((6, 0)))
    assert np.allclose(x, z - k, rtol=0, atol=1e-15)


def test_single_euler_step_definition(trained_like):
    z = RngState(4).normal((5, 2))
    c = np.zeros((5, 0))
    x, _ = samplers.sample_euler_reflow(trained_like, z, c, 1)
    assert np.array_equal(x, z - trained_like(z, 1.0, 1.0, c))


def test_multistep_k1_equals_one_step(trained_like):
    z = RngState(4).normal((5, 2))
    c = np.zeros((5, 0))
    a, _ = samplers.sample_meanflow_multistep(trained_like, z, c, 1)
    b, _ = samplers.sample_meanflow_1step(trained_like, z, c)
    assert np.array_equal(a, b)


def test_multistep_unscaled_variant(trained_like):
    z = RngState(4).normal((5, 2))
    c = np.zeros((5, 0))
    x, _ = samplers.sample_meanflow_multistep(trained_like, z, c, 2, displacement_scaling=False)
    mid = z - trained_like(z, 0.5, 1.0, c)
    assert np.array_equal(x, mid - trained_like(mid, 0.0, 0.5, c))


def test_hybrid_coarse_stage_is_one_step_output(trained_like):
    z = RngState(5).normal((9, 2))
    c = np.zeros((9, 0))
    _, trace = samplers.sample_hybridflow(trained_like, z, c, SamplerSpec("hybridflow"))
    one, _ = samplers.sample_meanflow_1step(trained_like, z, c)
    assert np.array_equal(trace.state("coarse"), one)
    assert trace.labels == ["noise", "coarse", "renoised", "final"]


def test_renoise_examples():
    assert samplers.renoise(np.zeros((1, 1)), np.ones((1, 1)), 0.15)[0, 0] == 0.15
    x, z = np.array([[3.0, -1.0]]), np.array([[0.2, 0.7]])
    assert np.allclose(samplers.renoise(x, z, 1e-9), x, atol=1e-8)
    assert np.allclose(samplers.renoise(x, z, 1 - 1e-9), z, atol=1e-8)
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            samplers.renoise(x, z, bad)


@given(arrays(np.float64, (6, 3), elements=st.floats(-5, 5)), arrays(np.float64, (6, 3), elements=st.floats(-5, 5)),
       st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_renoise_moves_linearly_toward_noise(x, z, alpha):
    out = samplers.renoise(x, z, alpha)
    assert np.allclose(out - x, alpha * (z - x), rtol=1e-12, atol=1e-12)


@given(arrays(np.float64, (50, 2), elements=st.floats(-10, 10)), st.floats(0.01, 0.99), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_renoise_variance_identity(x_coarse, alpha, seed):
    z1 = RngState(seed).normal((50, 2))
    z_ref = samplers.renoise(x_coarse, z1, alpha)
    _, v_ref = mean_var(z_ref)
    _, v_z = mean_var(z1)
    _, v_x = mean_var(x_coarse)
    rhs = alpha**2 * v_z + (1 - alpha) ** 2 * v_x + 2 * alpha * (1 - alpha) * covariance(z1, x_coarse)
    assert np.max(np.abs(v_ref - rhs)) <= 1e-10 * max(1.0, float(np.max(np.abs(v_x))))


def test_fresh_noise_decorrelates_renoise(oracle, z1):
    spec = SamplerSpec("hybridflow", fresh_noise_renoise=True)
    _, trace = samplers.sample_hybridflow(tasks.OracleField(oracle), z1, NO_C, spec, rng=RngState(9))
    x, zr = trace.state("coarse"), trace.state("renoised")
    noise = (zr - (1 - spec.alpha) * x) / spec.alpha
    cov = covariance(noise, x)[0]
    se = np.sqrt(mean_var(noise)[1][0] * mean_var(x)[1][0] / N)
    assert np.all(np.abs(cov) <= 1.96 * se)
    # with shared noise the covariance is strongly positive
    same = covariance(z1, x)[0]
    assert np.all(same > 10 * se)


def test_exact_field_one_step_lands_on_data(oracle, z1):
    x, _ = samplers.sample_meanflow_1step(tasks.OracleField(oracle), z1, NO_C)
    m, v = mean_var(x)
    assert np.all(np.abs(m[0] - MU) <= 0.05 * np.abs(MU))
    assert np.all(np.abs(v[0] / SIGMA**2 - 1) <= 0.05)


def _euler_gain(steps):
    # Euler on the affine field multiplies (z - (1-t) mu) by prod(1 - h k_t) along the grid
    g = 1.0
    for k in range(steps):
        g *= 1.0 - tasks.velocity_gain(SIGMA, 1.0 - k / steps) / steps
    return g


def test_exact_field_euler_matches_product_formula(oracle, z1):
    x, _ = samplers.sample_euler_reflow(tasks.OracleField(oracle), z1, NO_C, 64)
    expected = MU + _euler_gain(64) * z1
    assert np.allclose(x, expected, rtol=1e-10, atol=1e-10)
    m, _ = mean_var(x)
    assert np.all(np.abs(m[0] - MU) <= 0.02 * np.abs(MU))


@pytest.mark.xfail(strict=True, reason="64 Euler steps carry ~13% variance bias at sigma=0.1 (first-order error)")
def test_exact_field_euler_variance_within_two_percent(oracle, z1):
    x, _ = samplers.sample_euler_reflow(tasks.OracleField(oracle), z1, NO_C, 64)
    assert np.all(np.abs(mean_var(x)[1][0] / SIGMA**2 - 1) <= 0.02)


def _hybrid_gain(alpha):
    # exact jump gives mu + sigma z1; re-noise and one r = t step are affine too
    return (alpha + (1 - alpha) * SIGMA) * (1 - alpha * tasks.velocity_gain(SIGMA, alpha))


def test_exact_field_hybrid_matches_affine_composition(oracle, z1):
    x, _ = samplers.sample_hybridflow(tasks.OracleField(oracle), z1, NO_C, SamplerSpec("hybridflow"))
    assert np.allclose(x, MU + _hybrid_gain(0.15) * z1, rtol=1e-10, atol=1e-10)
    m, v = mean_var(x)
    assert np.all(np.abs(m[0] - MU) <= 0.05 * np.abs(MU))
    assert np.all(np.abs(v[0] / _hybrid_gain(0.15) ** 2 - 1) <= 0.05)


@pytest.mark.xfail(strict=True, reason="the exact-field composition has std ratio ~0.67 to the data at sigma=0.1")
def test_exact_field_hybrid_variance_matches_data(oracle, z1):
    x, _ = samplers.sample_hybridflow(tasks.OracleField(oracle), z1, NO_C, SamplerSpec("hybridflow"))
    assert np.all(np.abs(mean_var(x)[1][0] / SIGMA**2 - 1) <= 0.05)


def test_hybrid_fresh_noise_needs_rng(trained_like):
    with pytest.raises(DomainError):
        samplers.sample_hybridflow(trained_like, np.zeros((2, 2)), np.zeros((2, 0)),
                                   SamplerSpec("hybridflow", fresh_noise_renoise=True))


def test_unscaled_refine_step(trained_like):
    z = RngState(6).normal((3, 2))
    c = np.zeros((3, 0))
    spec = SamplerSpec("hybridflow", displacement_scaling=False)
    x, trace = samplers.sample_hybridflow(trained_like, z, c, spec)
    zr = trace.state("renoised")
    assert np.array_equal(x, zr - trained_like(zr, 0.15, 0.15, c))
