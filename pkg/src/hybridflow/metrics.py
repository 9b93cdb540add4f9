"""Sample-quality metrics, validation losses and error-analysis diagnostics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import flowcore, samplers
from .numkit import DomainError, RngState, ShapeError, as_real_array
from .tasks import (
    GaussianOracle,
    OracleField,
    TaskSpec,
    draw,
    gaussian_oracle,
    oracle_instantaneous_velocity,
    oracle_marginal,
    oracle_transport,
)

METRICS_SCHEMA = "hybridflow.metrics/1"
_BLOCK = 1024


class UnsupportedTaskError(DomainError):
    pass


def _canonical(a: np.ndarray, b: np.ndarray):
    # Fixed argument order makes every float operation identical for (a, b) and (b, a).
    ka = (a.shape, a.tobytes())
    kb = (b.shape, b.tobytes())
    return (a, b) if ka <= kb else (b, a)


def _mean_pairwise_distance(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for i in range(0, a.shape[0], _BLOCK):
        total += float(cdist(a[i : i + _BLOCK], b).sum())
    return total / (a.shape[0] * b.shape[0])


def energy_distance(A, B) -> float:
    """V-statistic energy distance 2 E|a-b| - E|a-a'| - E|b-b'|."""
    A = as_real_array(A, name="A")
    B = as_real_array(B, name="B", cols=A.shape[1])
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise DomainError("energy distance needs at least 2 points per sample")
    A, B = _canonical(A, B)
    cross = _mean_pairwise_distance(A, B)
    within_a = _mean_pairwise_distance(A, A)
    within_b = _mean_pairwise_distance(B, B)
    return max(math.fsum([2.0 * cross, -within_a, -within_b]), 0.0)


def median_bandwidth(A, B) -> float:
    """Median pairwise distance of the pooled sample (at most 1000 rows each)."""
    pooled = np.concatenate([np.asarray(A)[:1000], np.asarray(B)[:1000]])
    diff = pooled[:, None, :] - pooled[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    med = float(np.median(d[np.triu_indices(pooled.shape[0], k=1)]))
    return med if med > 0 else 1.0


def _mean_kernel(a, b, bandwidth) -> float:
    total = 0.0
    for i in range(0, a.shape[0], _BLOCK):
        sq = cdist(a[i : i + _BLOCK], b, "sqeuclidean")
        total += float(np.exp(-0.5 * sq / bandwidth**2).sum())
    return total / (a.shape[0] * b.shape[0])


def mmd_rbf(A, B, bandwidth: float | None = None) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel."""
    A = as_real_array(A, name="A")
    B = as_real_array(B, name="B", cols=A.shape[1])
    if bandwidth is None:
        bandwidth = median_bandwidth(A, B)
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    A, B = _canonical(A, B)
    kab = _mean_kernel(A, B, bandwidth)
    kaa = _mean_kernel(A, A, bandwidth)
    kbb = _mean_kernel(B, B, bandwidth)
    return max(math.fsum([kaa, kbb, -2.0 * kab]), 0.0)


# --- validation losses --------------------------------------------------


def validation_batch(task: TaskSpec, rng: RngState, n: int, mode: str) -> flowcore.PathBatch:
    """Held-out path batch with r = t (reflow) or r < t (meanflow) rows."""
    data = draw(task, rng, n)
    if mode == "reflow":
        t = rng.uniform(n)
        return flowcore.make_path_batch(data, rng, r=t, t=t)
    if mode == "meanflow":
        cfg = flowcore.TimeSamplingConfig(p_degenerate=0.0)
        r, t = flowcore.sample_time_pairs(rng, cfg, n)
        return flowcore.make_path_batch(data, rng, r=r, t=t)
    raise DomainError(f"unknown validation mode {mode!r}")


def validation_loss(params, batch: flowcore.PathBatch, mode: str, oracle: GaussianOracle | None = None) -> float:
    """Mean squared residual of u against the mode's target; no update.

    Without an oracle the target velocity is the per-sample v_star, which
    makes the reflow value equal the training loss on the same batch. With an
    oracle the conditional mean E[v_star | z_t, c] is used instead, removing
    the irreducible path-noise floor so the number measures fit error only.
    """
    if len(batch) == 0:
        raise DomainError("empty validation batch")
    if mode == "reflow" and not np.all(batch.degenerate):
        raise DomainError("reflow validation needs r = t rows")
    if mode == "meanflow" and np.any(batch.degenerate):
        raise DomainError("meanflow validation needs r < t rows")
    if mode not in ("reflow", "meanflow"):
        raise DomainError(f"unknown validation mode {mode!r}")
    velocity = None
    if oracle is not None:
        velocity = oracle_instantaneous_velocity(oracle, batch.z_t, batch.t, batch.c)
    loss, _ = flowcore.loss_and_grads(params, batch, velocity=velocity)
    return loss


# --- Lipschitz estimate ------------------------------------------------


def random_directions(rng: RngState, count: int, d: int) -> np.ndarray:
    w = rng.normal((count, d))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def lipschitz_estimate(field, probes, t: float, c, eps: float = 1e-3, n_dirs: int = 64,
                       rng: RngState | None = None, r: float | None = None) -> float:
    """max over probes and unit directions of |u(z + eps w) - u(z)| / eps."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    probes = as_real_array(probes, name="probes")
    n, d = probes.shape
    rng = rng or RngState(0)
    r = t if r is None else r
    dirs = random_directions(rng, n_dirs, d)
    c_arr = np.asarray(c, dtype=np.float64)
    if c_arr.ndim == 1:
        c_arr = np.broadcast_to(c_arr, (n, c_arr.shape[0]))
    base = field(probes, r, t, c_arr)
    best = 0.0
    for w in dirs:
        moved = field(probes + eps * w, r, t, c_arr)
        best = max(best, float(np.max(np.linalg.norm(moved - base, axis=1))) / eps)
    return best


# --- distribution shift ------------------------------------------------


@dataclass(frozen=True)
class ShiftEstimate:
    step: int
    label: str
    t: float
    kl: float


def gaussian_kl_diag(mean_p, var_p, mean_q, var_q) -> float:
    """KL(N(mean_p, diag var_p) || N(mean_q, diag var_q))."""
    mean_p, var_p = np.ravel(mean_p), np.ravel(var_p)
    mean_q = np.ravel(mean_q)
    var_q = np.broadcast_to(np.ravel(np.asarray(var_q, dtype=np.float64)), mean_q.shape)
    if np.any(var_p <= 0) or np.any(var_q <= 0):
        raise DomainError("variances must be positive")
    terms = var_p / var_q + (mean_p - mean_q) ** 2 / var_q - 1.0 + np.log(var_q / var_p)
    return max(0.5 * float(np.sum(terms)), 0.0)


def _fixed_condition(task: TaskSpec, rng: RngState, n: int, cond=None) -> np.ndarray:
    if cond is None:
        cond = draw(task, rng, 1).c[0]
    return np.broadcast_to(np.asarray(cond, dtype=np.float64), (n, task.cond_dim)).copy()


def shift_audit(field, spec: samplers.SamplerSpec, task: TaskSpec, n: int, rng: RngState, cond=None):
    """Diagonal-Gaussian KL proxy between each sampler state and q_t.

    All n trajectories share one condition so q_t is a single Gaussian.
    """
    oracle = gaussian_oracle(task)
    if oracle is None:
        raise UnsupportedTaskError(f"task {task.name!r} has no Gaussian oracle")
    c = _fixed_condition(task, rng, n, cond)
    z1 = rng.normal((n, task.dim))
    _, trace = samplers.sample(field, z1, c, spec, rng=rng)
    out = []
    for k, (label, state, t) in enumerate(zip(trace.labels, trace.states, trace.times)):
        mean_q, var_q = oracle_marginal(oracle, t, c[:1], 1)
        kl = gaussian_kl_diag(state.mean(axis=0), state.var(axis=0, ddof=1), mean_q[0], var_q)
        out.append(ShiftEstimate(k, label, float(t), kl))
    return out


# --- error accumulation ------------------------------------------------


@dataclass
class AccumulationRow:
    step: int
    mean_error: float
    mean_deviation: float
    lipschitz: float
    holds_fraction: float


@dataclass
class AccumulationAudit:
    rows: list[AccumulationRow]
    trajectory_holds_fraction: float
    errors: np.ndarray = field(repr=False)
    deviations: np.ndarray = field(repr=False)


def error_accumulation_audit(field, task: TaskSpec, K: int, n: int, rng: RngState, cond=None,
                             n_dirs: int = 64, slack: float = 1e-9) -> AccumulationAudit:
    """Multi-step jumps of ``field`` against exact transport from the same noise.

    Per step k (interval [t_{k+1}, t_k], length h):
      e_k   = h (u_theta(z^k) - u*(z^k))      at the visited state
      dev_k = |z^k - z*^k|
      L_k   = Lipschitz estimate of z -> h u*(z) on the visited states
    and the audit checks dev_{k+1} <= (1 + L_k) dev_k + |e_k| per trajectory.
    """
    oracle = gaussian_oracle(task)
    if oracle is None:
        raise UnsupportedTaskError(f"task {task.name!r} has no Gaussian oracle")
    if K < 1:
        raise DomainError("K must be >= 1")
    c = _fixed_condition(task, rng, n, cond) if cond is not None else draw(task, rng, n).c
    exact = OracleField(oracle)
    grid = samplers.time_grid(K)
    z = rng.normal((n, task.dim))
    z_star = z.copy()
    errs = np.zeros((K, n))
    devs = np.zeros((K + 1, n))
    holds = np.ones(n, dtype=bool)
    rows = []
    for k in range(K):
        hi, lo = float(grid[k]), float(grid[k + 1])
        h = hi - lo
        u_model = field(z, lo, hi, c)
        u_true = exact(z, lo, hi, c)
        e = h * np.linalg.norm(u_model - u_true, axis=1)
        lip = h * lipschitz_estimate(exact, z[: min(n, 64)], hi, c[: min(n, 64)], n_dirs=n_dirs,
                                     rng=rng.split(k), r=lo)
        z = z - h * u_model
        z_star = oracle_transport(oracle, z_star, hi, lo, c)
        dev_next = np.linalg.norm(z - z_star, axis=1)
        ok = dev_next <= (1.0 + lip) * devs[k] + e + slack * (1.0 + dev_next)
        holds &= ok
        errs[k] = e
        devs[k + 1] = dev_next
        rows.append(AccumulationRow(k, float(e.mean()), float(dev_next.mean()), lip, float(ok.mean())))
    return AccumulationAudit(rows, float(holds.mean()), errs, devs)


# --- reports -------------------------------------------------------------


@dataclass(frozen=True)
class MetricEntry:
    metric: str
    value: float
    task: str = ""
    sampler: str = ""
    K: int | str = ""
    alpha: float | str = ""
    seed: int | str = ""
    n: int | str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DomainError(f"metric {self.metric} is not finite")


@dataclass
class MetricReport:
    entries: list[MetricEntry] = field(default_factory=list)

    def add(self, metric: str, value: float, **meta) -> None:
        self.entries.append(MetricEntry(metric, float(value), **meta))

    def get(self, metric: str, sampler: str | None = None) -> float:
        for e in self.entries:
            if e.metric == metric and (sampler is None or e.sampler == sampler):
                return e.value
        raise KeyError((metric, sampler))

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(f"# schema={METRICS_SCHEMA}{(' ' + header) if header else ''}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "task", "sampler", "K", "alpha", "seed", "n"])
        for e in self.entries:
            w.writerow([e.metric, repr(e.value), e.task, e.sampler, e.K, e.alpha, e.seed, e.n])
        return buf.getvalue()

    def write(self, path, header: str = "") -> Path:
        path = Path(path)
        path.write_text(self.to_csv(header), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "MetricReport":
        lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
        rep = cls()
        for row in csv.DictReader(lines):
            meta = {k: row[k] for k in ("task", "sampler", "K", "alpha", "seed", "n")}
            rep.add(row["metric"], float(row["value"]), **meta)
        return rep
