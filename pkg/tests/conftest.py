import numpy as np
import pytest

from hybridflow import net
from hybridflow.numkit import RngState


def linear_params(A: np.ndarray, cond_dim: int = 0) -> net.NetworkParams:
    """u = [z, r, t, c] @ A via two identity layers (first layer is the identity map)."""
    fan_in, d = A.shape
    arch = net.NetworkArch(d, cond_dim, (fan_in,), "identity", 0)
    assert arch.feature_dim == fan_in
    return net.NetworkParams(arch, (np.eye(fan_in), A), (np.zeros(fan_in), np.zeros(d)))


def constant_params(k, cond_dim: int = 0) -> net.NetworkParams:
    k = np.asarray(k, dtype=np.float64)
    arch = net.NetworkArch(k.size, cond_dim, (3,), "silu", 0)
    zeros = net.zero_params(arch)
    return net.NetworkParams(arch, zeros.weights, (zeros.biases[0], k))


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture
def small_arch():
    return net.NetworkArch(2, 1, (16, 16), "silu", 4)
