"""Independent-reference checks: autodiff vs finite differences, closed forms vs brute force.

``run_checks`` returns one ``CheckResult`` per comparison. ``gain_perturbation``
scales the slope of the closed-form instantaneous velocity; any non-zero
value must make the velocity checks fail.
"""

from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter

import numpy as np

from .. import flowcore, metrics, net, tasks
from ..numkit import RngState


@dataclass(frozen=True)
class CheckResult:
    name: str
    family: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.family:<22s} {self.name:<44s} value={self.value:.3e} tol={self.tolerance:.1e}"


def _rel(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def random_case(rng: RngState, n: int = 4, d: int = 3, cond_dim: int = 2):
    arch = net.NetworkArch(d, cond_dim, (16, 12), "silu", 4)
    params = net.init_params(arch, rng)
    # non-zero biases so every code path is exercised
    params = params.with_flat(params.flat() + 0.1 * rng.normal(params.size))
    z = rng.normal((n, d))
    t = rng.uniform(n) * 0.9 + 0.05
    r = t * (0.05 + 0.9 * rng.uniform(n))
    c = rng.normal((n, cond_dim))
    return params, z, r, t, c


def jvp_max_error(cases: int = 100, seed: int = 11, h: float = 1e-5) -> float:
    rng = RngState(seed)
    worst = 0.0
    for _ in range(cases):
        params, z, r, t, c = random_case(rng)
        dz = rng.normal(z.shape)
        dr = rng.normal(z.shape[0]) * 0.1
        dt = rng.normal(z.shape[0]) * 0.1
        _, du = net.forward_jvp(params, z, r, t, c, net.InputTangent(dz, dr, dt))
        up = params(z + h * dz, r + h * dr, t + h * dt, c)
        um = params(z - h * dz, r - h * dr, t - h * dt, c)
        fd = (up - um) / (2.0 * h)
        worst = max(worst, _rel(du, fd))
    return worst


def frozen_target_loss(params, z, r, t, c, target) -> float:
    u = params(z, r, t, c)
    return float(np.mean((u - target) ** 2))


def grad_max_error(cases: int = 100, seed: int = 12, h: float = 1e-5) -> float:
    """Backprop through the MeanFlow loss vs finite differences with the target frozen."""
    rng = RngState(seed)
    worst = 0.0
    for _ in range(cases):
        params, z, r, t, c = random_case(rng)
        v = rng.normal(z.shape)
        batch = flowcore.PathBatch(z, v, c, r, t, z, v)
        _, grads = flowcore.loss_and_grads(params, batch)
        _, du = net.forward_jvp(params, z, r, t, c, net.InputTangent(v, 0.0, 1.0))
        target = flowcore.meanflow_target(v, r, t, du)
        flat = params.flat()
        i = int(rng.integers(flat.size, 1)[0])
        e = np.zeros_like(flat)
        e[i] = h
        lp = frozen_target_loss(params.with_flat(flat + e), z, r, t, c, target)
        lm = frozen_target_loss(params.with_flat(flat - e), z, r, t, c, target)
        fd = (lp - lm) / (2.0 * h)
        worst = max(worst, _rel(grads.flat()[i], fd))
    return worst


def _closed_v(oracle, z, t, c, gain_perturbation: float):
    v = tasks.oracle_instantaneous_velocity(oracle, z, t, c)
    if gain_perturbation:
        n = z.shape[0]
        tt = np.full((n, 1), t) if np.ndim(t) == 0 else np.asarray(t)[:, None]
        mu = oracle.mean(c, n)
        v = v + gain_perturbation * tasks.velocity_gain(oracle.sigma, tt) * (z - (1.0 - tt) * mu)
    return v


def _check(name, family, fn, tol):
    t0 = perf_counter()
    value = float(fn())
    return CheckResult(name, family, value, tol, bool(value <= tol), perf_counter() - t0)


def run_checks(gain_perturbation: float = 0.0, fast: bool = False) -> list[CheckResult]:
    oracle = tasks.constant_oracle([1.0, -0.5], 0.3)
    no_c = np.zeros((1, 0))
    mc_n = 200_000 if fast else 1_000_000
    results = []

    results.append(_check("jvp vs central differences (100 cases)", "jvp_finite_difference",
                          lambda: jvp_max_error(20 if fast else 100), 1e-5))
    results.append(_check("param grads vs central differences (100 coords)", "grad_finite_difference",
                          lambda: grad_max_error(20 if fast else 100), 1e-5))

    for k, (z, t) in enumerate([((0.3, 0.2), 0.0), ((0.3, 0.2), 0.3), ((-1.0, 1.5), 0.7), ((0.5, -0.5), 1.0)]):
        def mc_score(z=z, t=t, k=k):
            zz = np.array([z])
            est, se = tasks.mc_instantaneous_velocity(oracle, zz, t, None, RngState(100 + k), mc_n)
            closed = _closed_v(oracle, zz, t, no_c, gain_perturbation)[0]
            return float(np.max(np.abs(closed - est) / se))
        results.append(_check(f"v* vs Monte Carlo z={z} t={t}", "instantaneous_monte_carlo", mc_score, 3.0))

    def mu_limit():
        mu = np.array([[1.0, -0.5]])
        est, _ = tasks.mc_instantaneous_velocity(oracle, mu, 0.0, None, RngState(7), mc_n)
        closed = _closed_v(oracle, mu, 0.0, no_c, gain_perturbation)[0]
        return max(float(np.max(np.abs(est + mu[0]) / np.abs(mu[0]))), _rel(closed, -mu[0]))
    results.append(_check("v*(mu, t=0) = -mu (Monte Carlo)", "instantaneous_monte_carlo", mu_limit, 1e-2))

    rng = RngState(21)
    for k in range(3):
        z = rng.normal((1, 2))
        t = float(0.2 + 0.8 * rng.uniform(1)[0])
        r = float(t * rng.uniform(1)[0])

        def euler_score(z=z, r=r, t=t):
            closed = tasks.oracle_average_velocity(oracle, z, r, t, no_c)
            z_r = tasks.euler_transport(lambda zz, tt, cc: _closed_v(oracle, zz, tt, cc, gain_perturbation),
                                        z, t, r, no_c, 4096)
            return _rel(closed, (z - z_r) / (t - r))
        results.append(_check(f"u* vs 4096-step Euler (r={r:.3f}, t={t:.3f})", "average_fine_grid_euler",
                              euler_score, 1e-4))

    def order_score():
        # First-order convergence toward the closed form: 4x the steps, 1/4 the error.
        z = np.array([[0.4, -1.2]])
        r, t = 0.0, 0.32
        closed = tasks.oracle_average_velocity(oracle, z, r, t, no_c)
        errs = []
        for k in (1024, 4096):
            z_r = tasks.euler_transport(lambda zz, tt, cc: _closed_v(oracle, zz, tt, cc, gain_perturbation),
                                        z, t, r, no_c, k)
            errs.append(_rel(closed, (z - z_r) / (t - r)))
        return abs(errs[0] / errs[1] - 4.0) / 4.0
    results.append(_check("Euler error shrinks 4x from 1024 to 4096 steps", "euler_convergence_order",
                          order_score, 0.05))

    def identity_score():
        worst = 0.0
        g = RngState(22)
        for _ in range(20):
            z = g.normal((1, 2))
            t = float(0.1 + 0.9 * g.uniform(1)[0])
            r = float(t * g.uniform(1)[0])
            v = _closed_v(oracle, z, t, no_c, 0.0)
            h = 1e-5
            up = tasks.oracle_average_velocity(oracle, z + h * v, r, min(t + h, 1.0), no_c)
            um = tasks.oracle_average_velocity(oracle, z - h * v, r, t - h, no_c)
            du = (up - um) / ((min(t + h, 1.0) - (t - h)))
            lhs = flowcore.meanflow_target(v, r, t, du)
            worst = max(worst, float(np.max(np.abs(lhs - tasks.oracle_average_velocity(oracle, z, r, t, no_c)))))
        return worst
    results.append(_check("v - (t-r) du*/dt equals u* (finite-diff du/dt)", "meanflow_identity",
                          identity_score, 1e-6))

    def interp_score():
        g = RngState(23)
        n = 20000
        x0 = oracle.mean(no_c, n) + oracle.sigma * g.normal((n, 2))
        z1 = g.normal((n, 2))
        worst = 0.0
        for t in (0.1, 0.5, 0.9):
            zt = flowcore.interpolate(x0, z1, t)
            m, var = tasks.oracle_marginal(oracle, t, no_c, 1)
            worst = max(worst, float(np.max(np.abs(zt.mean(0) - m[0]))) / max(float(np.max(np.abs(m))), np.sqrt(var)),
                        float(np.max(np.abs(zt.var(0, ddof=1) / var - 1.0))))
        return worst
    results.append(_check("interpolated draws match q_t moments", "interpolation_marginal", interp_score, 0.03))

    def transport_score():
        g = RngState(24)
        z1 = g.normal((10000, 2))
        x = tasks.oracle_transport(oracle, z1, 1.0, 0.0, no_c)
        mu = oracle.mean(no_c, 1)[0]
        mean_err = float(np.max(np.abs(x.mean(0) - mu) / np.abs(mu)))
        var_err = float(np.max(np.abs(x.var(0, ddof=1) / oracle.sigma**2 - 1.0)))
        return max(mean_err, var_err)
    results.append(_check("closed-form transport lands on data law", "transport_self_consistency",
                          transport_score, 0.02))

    def kl_score():
        m = np.array([0.3, -1.0])
        v = np.array([0.5, 2.0])
        zero = metrics.gaussian_kl_diag(m, v, m, v)
        pos = metrics.gaussian_kl_diag(m + 0.1, v, m, v)
        return zero if pos > 0 else 1.0
    results.append(_check("Gaussian KL proxy is zero iff moments match", "kl_proxy", kl_score, 1e-15))
    return results


def report(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    fams = sorted({r.family for r in results})
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks across {len(fams)} families, {failed} failed")
    return "\n".join(lines)
