import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hybridflow.numkit import (
    RngState, ShapeError, VarianceUndefinedError, as_real_array, covariance, gauss, mean_var,
)


def test_gauss_reset_reproduces():
    rng = RngState(7)
    a = gauss(rng, 2, 2)
    rng.reset()
    assert np.array_equal(a, gauss(rng, 2, 2))


def test_gauss_moments():
    x = gauss(RngState(3), 10000, 1)
    assert -0.05 <= x.mean() <= 0.05
    assert 0.95 <= x.var(ddof=1) <= 1.05


def test_gauss_shape():
    assert gauss(RngState(0), 1, 3).shape == (1, 3)


@pytest.mark.parametrize("n,d", [(0, 2), (2, 0)])
def test_gauss_rejects_empty(n, d):
    with pytest.raises(ValueError):
        gauss(RngState(0), n, d)


@given(st.integers(0, 2**32), st.integers(0, 50))
@settings(max_examples=25, deadline=None)
def test_same_seed_same_stream(seed, stream):
    a, b = RngState(seed, stream), RngState(seed, stream)
    assert np.array_equal(a.normal((3, 2)), b.normal((3, 2)))
    assert np.array_equal(a.uniform(4), b.uniform(4))


def test_split_streams_are_distinct_and_stable():
    root = RngState(5)
    x = root.split(0).normal(8)
    y = root.split(1).normal(8)
    assert not np.array_equal(x, y)
    assert np.array_equal(x, RngState(5).split(0).normal(8))


def test_split_does_not_advance_parent():
    a, b = RngState(9), RngState(9)
    a.split(3).normal(100)
    assert np.array_equal(a.normal(5), b.normal(5))


def test_mean_var_examples():
    m, v = mean_var([[1.0, 1.0], [1.0, 1.0]])
    assert np.array_equal(m, [[1.0, 1.0]]) and np.array_equal(v, [[0.0, 0.0]])
    m, v = mean_var([[0.0], [2.0]])
    assert m[0, 0] == 1.0 and v[0, 0] == 2.0
    _, v = mean_var(gauss(RngState(1), 10000, 1))
    assert abs(v[0, 0] - 1.0) < 0.05


def test_mean_var_needs_two_rows():
    with pytest.raises(VarianceUndefinedError):
        mean_var([[1.0, 2.0]])


@given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
@settings(max_examples=50, deadline=None)
def test_covariance_with_self_is_variance(a):
    _, v = mean_var(a)
    assert np.allclose(covariance(a, a), v, rtol=1e-12, atol=1e-9)


def test_shape_safety():
    with pytest.raises(ShapeError):
        as_real_array(np.zeros(3))
    with pytest.raises(ShapeError):
        as_real_array(np.zeros((3, 2)), cols=3)
    with pytest.raises(ShapeError):
        covariance(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        as_real_array([[np.nan]])
