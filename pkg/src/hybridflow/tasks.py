"""Synthetic conditional data distributions and the Gaussian closed forms.

Three tasks are available:

``cond_gauss``
    x0 | c ~ N(mu(c), sigma^2 I) with mu(c) = mean + gain * c (c cycled over d).
``cond_gmm2d``
    Isotropic Gaussian components on a circle. The condition is a one-hot
    component selector, so every conditional law is again an isotropic
    Gaussian and the closed-form oracle applies per condition.
``action_chunk_spline``
    Natural cubic splines through four knots between a start and goal point,
    sampled at ``horizon`` instants for ``dof`` coordinates (d = horizon*dof).

For isotropic Gaussian data and N(0, I) noise joined by the straight path
z_t = (1-t) x0 + t z1, the marginal is q_t = N((1-t) mu, s_t^2 I) with
s_t^2 = (1-t)^2 sigma^2 + t^2. The conditional mean velocity is affine,

    v*(z, t) = -mu + k_t (z - (1-t) mu),   k_t = (t - (1-t) sigma^2) / s_t^2,

and its flow maps z_t to z_r = (1-r) mu + (s_r / s_t) (z_t - (1-t) mu).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .numkit import DomainError, RngState, ShapeError, as_column

TASK_NAMES = ("cond_gauss", "cond_gmm2d", "action_chunk_spline")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    dim: int
    cond_dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise DomainError(f"unknown task {self.name!r}")
        if self.dim < 1 or self.cond_dim < 0:
            raise DomainError("task dimensions must be positive")
        p = self.params
        if self.name == "cond_gmm2d":
            w = np.asarray(p["weights"], dtype=float)
            if self.dim != 2 or len(w) != p["n_components"] or self.cond_dim != p["n_components"]:
                raise DomainError("cond_gmm2d: inconsistent component layout")
            if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
                raise DomainError("cond_gmm2d: mixture weights must be non-negative and sum to 1")
        if self.name in ("cond_gauss", "cond_gmm2d") and not p["sigma"] > 0:
            raise DomainError("covariance scale must be positive")
        if self.name == "cond_gauss" and len(p["mean"]) != self.dim:
            raise DomainError("cond_gauss: mean length must equal dim")
        if self.name == "action_chunk_spline":
            if self.dim != p["horizon"] * p["dof"] or self.cond_dim != 2 * p["dof"]:
                raise DomainError("action_chunk_spline: need d = horizon*dof and cond_dim = 2*dof")

    def to_dict(self) -> dict:
        return {"name": self.name, "dim": self.dim, "cond_dim": self.cond_dim, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["name"], int(d["dim"]), int(d["cond_dim"]), dict(d.get("params", {})))


def cond_gauss(dim: int = 2, cond_dim: int = 1, mean=None, sigma: float = 0.1, gain: float = 0.5) -> TaskSpec:
    mean = [1.0] * dim if mean is None else [float(m) for m in mean]
    return TaskSpec("cond_gauss", dim, cond_dim, {"mean": mean, "sigma": float(sigma), "gain": float(gain)})


def cond_gmm2d(n_components: int = 4, radius: float = 2.0, sigma: float = 0.15, weights=None) -> TaskSpec:
    weights = [1.0 / n_components] * n_components if weights is None else [float(w) for w in weights]
    return TaskSpec(
        "cond_gmm2d", 2, n_components,
        {"n_components": n_components, "radius": float(radius), "sigma": float(sigma), "weights": weights},
    )


def action_chunk_spline(horizon: int = 16, dof: int = 2, knot_noise: float = 0.3) -> TaskSpec:
    return TaskSpec(
        "action_chunk_spline", horizon * dof, 2 * dof,
        {"horizon": horizon, "dof": dof, "knot_noise": float(knot_noise)},
    )


def make_task(name: str, **kwargs) -> TaskSpec:
    factories = {"cond_gauss": cond_gauss, "cond_gmm2d": cond_gmm2d, "action_chunk_spline": action_chunk_spline}
    if name not in factories:
        raise DomainError(f"unknown task {name!r}")
    return factories[name](**kwargs)


def gmm_means(task: TaskSpec) -> np.ndarray:
    k = task.params["n_components"]
    ang = 2.0 * math.pi * np.arange(k) / k
    return task.params["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass(frozen=True)
class ConditionedBatch:
    x0: np.ndarray
    c: np.ndarray

    def __len__(self) -> int:
        return self.x0.shape[0]


# --- spline construction -------------------------------------------------

_KNOT_TIMES = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def spline_basis(horizon: int) -> np.ndarray:
    """(horizon, 4) matrix mapping knot values to sampled spline values."""
    cs = CubicSpline(_KNOT_TIMES, np.eye(4), bc_type="natural")
    return cs(np.linspace(0.0, 1.0, horizon))


def smoothness_cap(task: TaskSpec) -> float:
    """Upper bound on |second difference| of any sampled trajectory.

    Knots lie in [-(1 + knot_noise), 1 + knot_noise] and sampled values are a
    fixed linear map of the knots, so the bound is the max absolute row sum
    of the second-difference operator times the knot bound.
    """
    d2 = np.diff(spline_basis(task.params["horizon"]), n=2, axis=0)
    return float(np.abs(d2).sum(axis=1).max() * (1.0 + task.params["knot_noise"]))


def draw(task: TaskSpec, rng: RngState, n: int) -> ConditionedBatch:
    """n i.i.d. (x0, c) pairs."""
    if n < 1:
        raise DomainError("draw needs n >= 1")
    p = task.params
    if task.name == "cond_gauss":
        c = rng.uniform((n, task.cond_dim)) * 2.0 - 1.0 if task.cond_dim else np.zeros((n, 0))
        mu = _gauss_mean(task, c)
        x0 = mu + p["sigma"] * rng.normal((n, task.dim))
    elif task.name == "cond_gmm2d":
        comp = rng.generator.choice(p["n_components"], size=n, p=np.asarray(p["weights"]))
        c = np.eye(p["n_components"])[comp]
        x0 = gmm_means(task)[comp] + p["sigma"] * rng.normal((n, 2))
    else:
        dof, horizon = p["dof"], p["horizon"]
        c = rng.uniform((n, 2 * dof)) * 2.0 - 1.0
        start, goal = c[:, :dof], c[:, dof:]
        noise = (rng.uniform((n, 2, dof)) * 2.0 - 1.0) * p["knot_noise"]
        knots = np.stack(
            [start, start + (goal - start) / 3.0 + noise[:, 0], start + 2.0 * (goal - start) / 3.0 + noise[:, 1], goal],
            axis=1,
        )  # (n, 4, dof)
        traj = np.einsum("hk,nkd->nhd", spline_basis(horizon), knots)
        x0 = traj.reshape(n, horizon * dof)
    return ConditionedBatch(x0, c)


def _gauss_mean(task: TaskSpec, c: np.ndarray) -> np.ndarray:
    mean = np.asarray(task.params["mean"], dtype=np.float64)
    n = c.shape[0]
    if task.cond_dim == 0:
        return np.broadcast_to(mean, (n, task.dim)).copy()
    idx = np.arange(task.dim) % task.cond_dim
    return mean + task.params["gain"] * c[:, idx]


def dump_dataset(path, batch: ConditionedBatch) -> Path:
    path = Path(path)
    k, d = batch.c.shape[1], batch.x0.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"c_{i}" for i in range(k)] + [f"x_{i}" for i in range(d)])
        for ci, xi in zip(batch.c, batch.x0):
            w.writerow([repr(float(v)) for v in ci] + [repr(float(v)) for v in xi])
    return path


def load_dataset(path) -> ConditionedBatch:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    k = sum(1 for h in header if h.startswith("c_"))
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return ConditionedBatch(data[:, k:], data[:, :k])


# --- Gaussian oracle -----------------------------------------------------


@dataclass(frozen=True)
class GaussianOracle:
    """Isotropic Gaussian data law N(mu(c), sigma^2 I) against N(0, I) noise."""

    mean_fn: Callable[[np.ndarray], np.ndarray]
    sigma: float
    dim: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("oracle sigma must be positive")

    def mean(self, c, n: int) -> np.ndarray:
        mu = np.asarray(self.mean_fn(_cond_rows(c, n)), dtype=np.float64)
        return np.broadcast_to(mu, (n, self.dim))


def _cond_rows(c, n: int) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = np.broadcast_to(c, (n, c.shape[0]))
    return c


def gaussian_oracle(task: TaskSpec) -> GaussianOracle | None:
    """Closed-form oracle for the conditionally Gaussian tasks, else None."""
    if task.name == "cond_gauss":
        return GaussianOracle(lambda c: _gauss_mean(task, c), task.params["sigma"], task.dim)
    if task.name == "cond_gmm2d":
        means = gmm_means(task)
        return GaussianOracle(lambda c: means[np.argmax(c, axis=1)], task.params["sigma"], 2)
    return None


def constant_oracle(mu, sigma: float) -> GaussianOracle:
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    return GaussianOracle(lambda c: mu, float(sigma), mu.shape[0])


def _check_t(t, n: int, name: str = "t") -> np.ndarray:
    t = as_column(t, n, name=name)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return t


def _marginal_var(sigma: float, t):
    return (1.0 - t) ** 2 * sigma**2 + t**2


def oracle_marginal(oracle: GaussianOracle, t: float, c=None, n: int = 1):
    """Mean (n, d) and per-coordinate variance of q_t."""
    if not 0.0 <= t <= 1.0:
        raise DomainError("t must lie in [0, 1]")
    mu = oracle.mean(c if c is not None else np.zeros((n, 0)), n)
    return (1.0 - t) * mu, _marginal_var(oracle.sigma, t)


def velocity_gain(sigma: float, t):
    """Slope k_t of the affine instantaneous velocity in z."""
    return (t - (1.0 - t) * sigma**2) / _marginal_var(sigma, t)


def oracle_instantaneous_velocity(oracle: GaussianOracle, z, t, c) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != oracle.dim:
        raise ShapeError(f"z must be (n, {oracle.dim})")
    n = z.shape[0]
    t = _check_t(t, n)[:, None]
    mu = oracle.mean(c, n)
    return -mu + velocity_gain(oracle.sigma, t) * (z - (1.0 - t) * mu)


def oracle_transport(oracle: GaussianOracle, z_t, t, r, c) -> np.ndarray:
    """Exact flow map of the oracle field from time t to time r."""
    z_t = np.asarray(z_t, dtype=np.float64)
    n = z_t.shape[0]
    t = _check_t(t, n)[:, None]
    r = _check_t(r, n, "r")[:, None]
    mu = oracle.mean(c, n)
    ratio = np.sqrt(_marginal_var(oracle.sigma, r) / _marginal_var(oracle.sigma, t))
    return (1.0 - r) * mu + ratio * (z_t - (1.0 - t) * mu)


def oracle_average_velocity(oracle: GaussianOracle, z_t, r, t, c) -> np.ndarray:
    """(z_t - z_r) / (t - r) under the exact flow; the r = t rows use v*."""
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 2 or z_t.shape[1] != oracle.dim:
        raise ShapeError(f"z must be (n, {oracle.dim})")
    n = z_t.shape[0]
    r = _check_t(r, n, "r")
    t = _check_t(t, n)
    if np.any(r > t):
        raise DomainError("average velocity needs r <= t")
    gap = t - r
    degenerate = gap == 0.0
    safe_gap = np.where(degenerate, 1.0, gap)[:, None]
    u = (z_t - oracle_transport(oracle, z_t, t, r, c)) / safe_gap
    if np.any(degenerate):
        v = oracle_instantaneous_velocity(oracle, z_t, t, c)
        u = np.where(degenerate[:, None], v, u)
    return u


def oracle_average_velocity_dt(oracle: GaussianOracle, z_t, r, t, c, v) -> np.ndarray:
    """Total derivative d/dt u*(z_t, r, t) along dz/dt = v, in closed form."""
    z_t = np.asarray(z_t, dtype=np.float64)
    n = z_t.shape[0]
    r = as_column(r, n)[:, None]
    t = as_column(t, n)[:, None]
    mu = oracle.mean(c, n)
    s2 = oracle.sigma**2
    vr, vt = _marginal_var(oracle.sigma, r), _marginal_var(oracle.sigma, t)
    rho = np.sqrt(vr / vt)
    drho_dt = -0.5 * rho * (2.0 * t - 2.0 * (1.0 - t) * s2) / vt
    # z_r = (1-r) mu + rho (z - (1-t) mu); differentiate in (z, t) along (v, 1).
    dzr = drho_dt * (z_t - (1.0 - t) * mu) + rho * (v + mu)
    gap = t - r
    zr = (1.0 - r) * mu + rho * (z_t - (1.0 - t) * mu)
    return ((v - dzr) * gap - (z_t - zr)) / gap**2


@dataclass(frozen=True)
class OracleField:
    """Callable u(z, r, t, c) backed by the closed-form average velocity."""

    oracle: GaussianOracle

    def __call__(self, z, r, t, c) -> np.ndarray:
        n = np.asarray(z).shape[0]
        return oracle_average_velocity(self.oracle, z, as_column(r, n), as_column(t, n), c)


# --- brute-force references ---------------------------------------------


def mc_instantaneous_velocity(oracle: GaussianOracle, z, t: float, c, rng: RngState, n: int = 1_000_000):
    """Importance-sampled E[z1 - x0 | z_t = z] from raw endpoint draws.

    For t < 1 noise z1 is drawn and x0 = (z - t z1)/(1-t) is weighted by the
    data density; at t = 1 data x0 is drawn and weighted by the noise density.
    Returns (estimate, standard error), both shaped (d,).
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    d = z.shape[0]
    mu = oracle.mean(np.atleast_2d(c) if c is not None else np.zeros((1, 0)), 1)[0]
    if t < 1.0:
        z1 = rng.normal((n, d))
        x0 = (z[None, :] - t * z1) / (1.0 - t)
        logw = -0.5 * np.sum((x0 - mu) ** 2, axis=1) / oracle.sigma**2
    else:
        x0 = mu + oracle.sigma * rng.normal((n, d))
        z1 = np.broadcast_to(z, (n, d))
        logw = np.zeros(n)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    vals = z1 - x0
    est = w @ vals
    # delta-method standard error of the self-normalised ratio estimator
    se = np.sqrt(np.sum((w[:, None] * (vals - est)) ** 2, axis=0))
    return est, se


def euler_transport(velocity: Callable, z, t_from: float, t_to: float, c, steps: int) -> np.ndarray:
    """Fine-grid explicit Euler integration of dz/dt = velocity(z, t, c)."""
    z = np.array(z, dtype=np.float64)
    grid = np.linspace(t_from, t_to, steps + 1)
    for a, b in zip(grid[:-1], grid[1:]):
        z = z + (b - a) * velocity(z, a, c)
    return z
