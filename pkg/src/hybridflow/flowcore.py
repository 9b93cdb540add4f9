"""Straight-line paths, (r, t) sampling, MeanFlow targets and the training step.

One network serves both objectives. Rows with r = t regress on the path
velocity v = z1 - x0 (ReFlow). Rows with r < t regress on the JVP target
u_tgt = v - (t - r) du/dt, with du/dt taken along the tangent (v, 0, 1)
and treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .numkit import DomainError, RngState, ShapeError, as_column
from .tasks import ConditionedBatch


@dataclass(frozen=True)
class TimePair:
    r: float
    t: float

    def __post_init__(self):
        if not (0.0 <= self.r <= self.t <= 1.0):
            raise DomainError(f"time pair needs 0 <= r <= t <= 1, got ({self.r}, {self.t})")

    @property
    def degenerate(self) -> bool:
        return self.r == self.t


@dataclass(frozen=True)
class TimeSamplingConfig:
    p_degenerate: float = 0.5
    distribution: str = "uniform"
    logit_mean: float = 0.0
    logit_std: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_degenerate <= 1.0:
            raise DomainError("p_degenerate must lie in [0, 1]")
        if self.distribution not in ("uniform", "logit_normal"):
            raise DomainError(f"unknown time distribution {self.distribution!r}")


@dataclass(frozen=True)
class PathBatch:
    """A batch of path samples; row i is one (x0, z1, c, r, t, z_t, v_star)."""

    x0: np.ndarray
    z1: np.ndarray
    c: np.ndarray
    r: np.ndarray
    t: np.ndarray
    z_t: np.ndarray
    v_star: np.ndarray

    def __len__(self) -> int:
        return self.x0.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        return self.r == self.t


def interpolate(x0, z1, t):
    """z_t = (1 - t) x0 + t z1, row-wise when t is a vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if x0.shape != z1.shape:
        raise ShapeError(f"x0 {x0.shape} and z1 {z1.shape} differ")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise DomainError("t must lie in [0, 1]")
    if t_arr.ndim == 1 and x0.ndim == 2:
        t_arr = t_arr[:, None]
    return (1.0 - t_arr) * x0 + t_arr * z1


def _draw_times(rng: RngState, cfg: TimeSamplingConfig, size) -> np.ndarray:
    if cfg.distribution == "uniform":
        return rng.uniform(size)
    return 1.0 / (1.0 + np.exp(-(cfg.logit_mean + cfg.logit_std * rng.normal(size))))


def sample_time_pairs(rng: RngState, cfg: TimeSamplingConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """n (r, t) pairs: r = t with probability p_degenerate, else sorted draws."""
    a = _draw_times(rng, cfg, n)
    b = _draw_times(rng, cfg, n)
    degenerate = rng.uniform(n) < cfg.p_degenerate
    r = np.where(degenerate, a, np.minimum(a, b))
    t = np.where(degenerate, a, np.maximum(a, b))
    return r, t


def sample_time_pair(rng: RngState, cfg: TimeSamplingConfig) -> TimePair:
    r, t = sample_time_pairs(rng, cfg, 1)
    return TimePair(float(r[0]), float(t[0]))


def make_path_batch(data: ConditionedBatch, rng: RngState, cfg: TimeSamplingConfig | None = None,
                    r=None, t=None) -> PathBatch:
    """Pair each data row with fresh noise and a time pair.

    Explicit ``r``/``t`` override sampling (used for mode-specific validation).
    """
    n, d = data.x0.shape
    z1 = rng.normal((n, d))
    if r is None or t is None:
        r, t = sample_time_pairs(rng, cfg or TimeSamplingConfig(), n)
    r = as_column(r, n, name="r")
    t = as_column(t, n, name="t")
    if np.any(r > t):
        raise DomainError("r must not exceed t")
    z_t = interpolate(data.x0, z1, t)
    return PathBatch(data.x0, z1, data.c, r, t, z_t, z1 - data.x0)


def meanflow_target(v, r, t, du_dt) -> np.ndarray:
    """u_tgt = v - (t - r) du/dt, row-wise."""
    v = np.asarray(v, dtype=np.float64)
    du_dt = np.asarray(du_dt, dtype=np.float64)
    gap = np.asarray(t, dtype=np.float64) - np.asarray(r, dtype=np.float64)
    if gap.ndim == 1 and v.ndim == 2:
        gap = gap[:, None]
    return v - gap * du_dt


def loss_and_grads(params: net.NetworkParams, batch: PathBatch, velocity=None):
    """Mean squared error of u against the stop-gradient target, and its gradient.

    ``velocity`` replaces ``batch.v_star`` as the regression velocity (both in
    the tangent and the target); metrics use it to pass conditional means.
    """
    v = batch.v_star if velocity is None else velocity
    u, du, trace = net.forward_jvp(
        params, batch.z_t, batch.r, batch.t, batch.c, net.InputTangent(v, 0.0, 1.0), return_trace=True
    )
    target = meanflow_target(v, batch.r, batch.t, du)
    resid = u - target
    loss = float(np.mean(resid * resid))
    grads = net.backward(params, trace, 2.0 * resid / resid.size)
    return loss, grads


def unified_loss_step(params: net.NetworkParams, batch: PathBatch, state: net.AdamState, lr: float | None = None):
    """One Adam step on the unified loss; returns the pre-step loss."""
    if len(batch) == 0:
        raise DomainError("empty batch")
    loss, grads = loss_and_grads(params, batch)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss")
    params, state = net.adam_step(params, grads, state, lr=lr)
    return loss, params, state
