"""Inference procedures over any velocity field callable ``field(z, r, t, c)``.

Every sampler returns ``(x, SampleTrace)``. One call to ``field`` is one
network function evaluation (NFE); traces report the count actually made.

With ``displacement_scaling`` on (default), a jump across [r, t] moves the
state by (t - r) * u. Turning it off reproduces the unscaled update rules
(z - u) for the multi-step and refine stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from time import perf_counter
from typing import Callable

import numpy as np

from .numkit import DomainError, RngState, ShapeError

MODES = ("euler_reflow", "meanflow_1step", "meanflow_multistep", "hybridflow")

VelocityField = Callable[..., np.ndarray]


@dataclass(frozen=True)
class SamplerSpec:
    mode: str
    steps: int = 1
    alpha: float | None = None
    t_refine: float | None = None
    displacement_scaling: bool = True
    fresh_noise_renoise: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"unknown sampler mode {self.mode!r}")
        if self.mode in ("euler_reflow", "meanflow_multistep") and self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.mode == "hybridflow":
            alpha = 0.15 if self.alpha is None else self.alpha
            if not 0.0 < alpha < 1.0:
                raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
            t_refine = alpha if self.t_refine is None else self.t_refine
            if not 0.0 < t_refine < 1.0:
                raise DomainError(f"t_refine must lie in (0, 1), got {t_refine}")
            object.__setattr__(self, "alpha", float(alpha))
            object.__setattr__(self, "t_refine", float(t_refine))
        if self.mode == "meanflow_1step":
            object.__setattr__(self, "steps", 1)

    @property
    def nfe(self) -> int:
        return {"meanflow_1step": 1, "hybridflow": 2}.get(self.mode, self.steps)

    @property
    def label(self) -> str:
        if self.mode == "hybridflow":
            return f"hybridflow[a={self.alpha:g}]"
        if self.mode == "meanflow_1step":
            return "meanflow_1step"
        return f"{self.mode}[K={self.steps}]"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "steps": self.steps, "alpha": self.alpha, "t_refine": self.t_refine,
            "displacement_scaling": self.displacement_scaling,
            "fresh_noise_renoise": self.fresh_noise_renoise,
        }

    @classmethod
    def parse(cls, text: str, **flags) -> "SamplerSpec":
        """Parse ``mode``, ``mode:K`` or ``hybridflow:alpha``."""
        mode, _, arg = text.strip().partition(":")
        if mode == "hybridflow":
            return cls(mode, alpha=float(arg) if arg else None, **flags)
        if mode in ("euler_reflow", "meanflow_multistep"):
            return cls(mode, steps=int(arg) if arg else 1, **flags)
        return cls(mode, **flags)

    def with_flags(self, **flags) -> "SamplerSpec":
        return replace(self, **flags)


@dataclass
class SampleTrace:
    z1: np.ndarray
    labels: list[str] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    stage_seconds: list[float] = field(default_factory=list)
    nfe: int = 0

    def record(self, label: str, state: np.ndarray, time: float, seconds: float) -> None:
        self.labels.append(label)
        self.states.append(state)
        self.times.append(time)
        self.stage_seconds.append(seconds)

    def state(self, label: str) -> np.ndarray:
        return self.states[self.labels.index(label)]


def _check_noise(z1) -> np.ndarray:
    z1 = np.asarray(z1, dtype=np.float64)
    if z1.ndim != 2:
        raise ShapeError(f"z1 must be (n, d), got {z1.shape}")
    return z1


def _global_jump(field, z1, c):
    return z1 - field(z1, 0.0, 1.0, c)


def sample_meanflow_1step(field: VelocityField, z1, c):
    """x = z1 - u(z1, 0, 1, c)."""
    z1 = _check_noise(z1)
    trace = SampleTrace(z1)
    trace.record("noise", z1, 1.0, 0.0)
    t0 = perf_counter()
    x = _global_jump(field, z1, c)
    trace.nfe = 1
    trace.record("final", x, 0.0, perf_counter() - t0)
    return x, trace


def sample_euler_reflow(field: VelocityField, z1, c, steps: int):
    """K Euler steps on the uniform grid t_k = 1 - k/K using r = t evaluations."""
    if steps < 1:
        raise DomainError("Euler sampler needs K >= 1")
    z = _check_noise(z1)
    trace = SampleTrace(z)
    trace.record("z^(0)", z, 1.0, 0.0)
    h = 1.0 / steps
    for k in range(steps):
        t0 = perf_counter()
        tk = 1.0 - k / steps
        z = z - h * field(z, tk, tk, c)
        trace.nfe += 1
        trace.record(f"z^({k + 1})", z, 1.0 - (k + 1) / steps, perf_counter() - t0)
    return z, trace


def time_grid(steps: int) -> np.ndarray:
    """Descending uniform grid 1 = t_0 > ... > t_K = 0."""
    return np.linspace(1.0, 0.0, steps + 1)


def sample_meanflow_multistep(field: VelocityField, z1, c, steps: int, displacement_scaling: bool = True):
    """Chain of average-velocity jumps over [t_{k+1}, t_k]."""
    if steps < 1:
        raise DomainError("multi-step sampler needs K >= 1")
    z = _check_noise(z1)
    trace = SampleTrace(z)
    trace.record("z^(0)", z, 1.0, 0.0)
    grid = time_grid(steps)
    for k in range(steps):
        t0 = perf_counter()
        hi, lo = float(grid[k]), float(grid[k + 1])
        u = field(z, lo, hi, c)
        z = z - (hi - lo) * u if displacement_scaling else z - u
        trace.nfe += 1
        trace.record(f"z^({k + 1})", z, lo, perf_counter() - t0)
    return z, trace


def renoise(x_coarse, z1, alpha: float) -> np.ndarray:
    """z_refine = alpha z1 + (1 - alpha) x_coarse."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    x_coarse = np.asarray(x_coarse, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if x_coarse.shape != z1.shape:
        raise ShapeError(f"x_coarse {x_coarse.shape} and z1 {z1.shape} differ")
    return alpha * z1 + (1.0 - alpha) * x_coarse


def sample_hybridflow(field: VelocityField, z1, c, spec: SamplerSpec, rng: RngState | None = None):
    """Global jump, re-noise toward q_alpha, then one r = t refinement step."""
    if spec.mode != "hybridflow":
        raise DomainError("sample_hybridflow needs a hybridflow spec")
    z1 = _check_noise(z1)
    trace = SampleTrace(z1)
    trace.record("noise", z1, 1.0, 0.0)

    t0 = perf_counter()
    x_coarse = _global_jump(field, z1, c)
    trace.nfe = 1
    trace.record("coarse", x_coarse, 0.0, perf_counter() - t0)

    t0 = perf_counter()
    if spec.fresh_noise_renoise:
        if rng is None:
            raise DomainError("fresh_noise_renoise needs an rng")
        noise = rng.normal(z1.shape)
    else:
        noise = z1
    z_refine = renoise(x_coarse, noise, spec.alpha)
    trace.record("renoised", z_refine, spec.t_refine, perf_counter() - t0)

    t0 = perf_counter()
    tr = spec.t_refine
    v = field(z_refine, tr, tr, c)
    x = z_refine - tr * v if spec.displacement_scaling else z_refine - v
    trace.nfe = 2
    trace.record("final", x, 0.0, perf_counter() - t0)
    return x, trace


def sample(field: VelocityField, z1, c, spec: SamplerSpec, rng: RngState | None = None):
    if spec.mode == "meanflow_1step":
        return sample_meanflow_1step(field, z1, c)
    if spec.mode == "euler_reflow":
        return sample_euler_reflow(field, z1, c, spec.steps)
    if spec.mode == "meanflow_multistep":
        return sample_meanflow_multistep(field, z1, c, spec.steps, spec.displacement_scaling)
    return sample_hybridflow(field, z1, c, spec, rng)


class CountingField:
    """Wraps a field and counts evaluations."""

    def __init__(self, inner: VelocityField):
        self.inner = inner
        self.calls = 0

    def __call__(self, z, r, t, c):
        self.calls += 1
        return self.inner(z, r, t, c)
