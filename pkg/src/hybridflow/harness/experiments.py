"""Evaluation, sweeps, latency measurement and the end-to-end demo pipeline.

All sample-quality comparisons are paired: for one evaluation seed every
sampler receives the same noise and conditions, and is scored against the
same reference draw from the task. Only latency depends on the clock, and
it is kept out of the CSV outputs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from time import perf_counter

import numpy as np

from .. import metrics, net, samplers, tasks
from ..numkit import DomainError, RngState
from ..samplers import SamplerSpec
from . import svg
from .config import ExperimentConfig, default_config
from .training import TrainResult, csv_header, plateau, read_log, train

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.40)
DEFAULT_ALPHA = 0.15
EVAL_N = 4000
LATENCY_CALLS = 1000
EVAL_STREAM = 7


def nfe_specs(alpha: float = DEFAULT_ALPHA, **flags) -> list[SamplerSpec]:
    specs = [SamplerSpec("meanflow_1step", **flags)]
    specs += [SamplerSpec("meanflow_multistep", steps=k, **flags) for k in (1, 2, 4, 8)]
    specs += [SamplerSpec("euler_reflow", steps=k, **flags) for k in (1, 2, 4, 8, 16)]
    specs.append(SamplerSpec("hybridflow", alpha=alpha, **flags))
    return specs


@dataclass(frozen=True)
class EvalDraws:
    reference: np.ndarray
    c: np.ndarray
    z1: np.ndarray
    seed: int

    def renoise_rng(self) -> RngState:
        return RngState(self.seed).split(EVAL_STREAM).split(2)


def evaluation_draws(task: tasks.TaskSpec, seed: int, n: int = EVAL_N) -> EvalDraws:
    rng = RngState(seed).split(EVAL_STREAM)
    ref = tasks.draw(task, rng.split(0), n)
    z1 = rng.split(1).normal((n, task.dim))
    return EvalDraws(ref.x0, ref.c, z1, seed)


def check_compatible(params: net.NetworkParams, task: tasks.TaskSpec) -> None:
    if params.arch.input_dim != task.dim or params.arch.cond_dim != task.cond_dim:
        raise DomainError(
            f"checkpoint dims ({params.arch.input_dim}, {params.arch.cond_dim}) do not fit task "
            f"{task.name} ({task.dim}, {task.cond_dim})"
        )


def score(params, spec: SamplerSpec, draws: EvalDraws, bandwidth: float) -> tuple[float, float, int]:
    x, trace = samplers.sample(params, draws.z1, draws.c, spec, rng=draws.renoise_rng())
    return (
        metrics.energy_distance(x, draws.reference),
        metrics.mmd_rbf(x, draws.reference, bandwidth),
        trace.nfe,
    )


def evaluate(params, task: tasks.TaskSpec, specs: list[SamplerSpec], n: int = EVAL_N, seed: int = 0,
             timing: bool = False, latency_calls: int = LATENCY_CALLS) -> metrics.MetricReport:
    """Energy distance, MMD and NFE per sampler (plus median latency if ``timing``)."""
    check_compatible(params, task)
    draws = evaluation_draws(task, seed, n)
    bw = metrics.median_bandwidth(draws.reference, draws.reference)
    report = metrics.MetricReport()
    lat = measure_latency(params, task, specs, calls=latency_calls, seed=seed) if timing else {}
    for spec in specs:
        ed, mmd, nfe = score(params, spec, draws, bw)
        meta = dict(task=task.name, sampler=spec.label, K=spec.steps, alpha=spec.alpha or "", seed=seed, n=n)
        report.add("energy_distance", ed, **meta)
        report.add("mmd_rbf", mmd, **meta)
        report.add("nfe", nfe, **meta)
        if timing:
            report.add("wall_ms_per_sample", lat[spec.label] * 1e3, **meta)
    return report


def measure_latency(params, task: tasks.TaskSpec, specs: list[SamplerSpec], calls: int = LATENCY_CALLS,
                    seed: int = 0) -> dict[str, float]:
    """Median seconds per single-sample call, per sampler label."""
    draws = evaluation_draws(task, seed, calls)
    rng = draws.renoise_rng()
    for spec in specs:
        for i in range(min(20, calls)):  # warm-up
            samplers.sample(params, draws.z1[i : i + 1], draws.c[i : i + 1], spec, rng=rng)
    # interleave samplers per call so load drift hits every sampler alike
    ts = {spec.label: [] for spec in specs}
    for i in range(calls):
        z1, c = draws.z1[i : i + 1], draws.c[i : i + 1]
        for spec in specs:
            t0 = perf_counter()
            samplers.sample(params, z1, c, spec, rng=rng)
            ts[spec.label].append(perf_counter() - t0)
    return {label: median(v) for label, v in ts.items()}


# --- sweeps ---------------------------------------------------------------


@dataclass
class SweepRow:
    label: str
    mode: str
    K: int
    alpha: float | None
    nfe: int
    energy: list[float]
    mmd: list[float]

    @property
    def energy_median(self) -> float:
        return float(np.median(self.energy))

    @property
    def mmd_median(self) -> float:
        return float(np.median(self.mmd))


@dataclass
class Sweep:
    kind: str
    rows: list[SweepRow]
    seeds: list[int]
    argmin: float | None = None

    def row(self, label: str) -> SweepRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self, header: str) -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sampler", "mode", "K", "alpha", "nfe", "energy_distance", "mmd_rbf", "seeds"])
        for r in self.rows:
            w.writerow([
                r.label, r.mode, r.K, "" if r.alpha is None else repr(r.alpha), r.nfe,
                repr(r.energy_median), repr(r.mmd_median), " ".join(str(s) for s in self.seeds),
            ])
        return buf.getvalue()


def _run_sweep(kind: str, params, task, specs, n: int, seeds) -> Sweep:
    check_compatible(params, task)
    rows = [SweepRow(s.label, s.mode, s.steps, s.alpha, s.nfe, [], []) for s in specs]
    for seed in seeds:
        draws = evaluation_draws(task, seed, n)
        bw = metrics.median_bandwidth(draws.reference, draws.reference)
        for row, spec in zip(rows, specs):
            ed, mmd, nfe = score(params, spec, draws, bw)
            if nfe != spec.nfe:
                raise AssertionError(f"{spec.label}: trace NFE {nfe} != analytic {spec.nfe}")
            row.energy.append(ed)
            row.mmd.append(mmd)
    return Sweep(kind, rows, list(seeds))


def sweep_alpha(params, task: tasks.TaskSpec, grid=DEFAULT_ALPHA_GRID, n: int = EVAL_N, seeds=(0,),
                **flags) -> Sweep:
    """HybridFlow quality over the re-noise ratio, with t_refine = alpha."""
    grid = [float(a) for a in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("alpha grid must be strictly increasing")
    if any(not 0.0 < a < 1.0 for a in grid):
        raise DomainError("alpha values must lie in (0, 1)")
    specs = [SamplerSpec("hybridflow", alpha=a, **flags) for a in grid]
    sweep = _run_sweep("alpha", params, task, specs, n, seeds)
    if len(grid) > 1:
        meds = [r.energy_median for r in sweep.rows]
        sweep.argmin = grid[int(np.argmin(meds))]
    return sweep


def sweep_nfe(params, task: tasks.TaskSpec, n: int = EVAL_N, seeds=(0,), alpha: float = DEFAULT_ALPHA,
              **flags) -> Sweep:
    return _run_sweep("nfe", params, task, nfe_specs(alpha, **flags), n, seeds)


def alpha_svg(sweep: Sweep) -> str:
    xs = [r.alpha for r in sweep.rows]
    return svg.line_chart(
        {"HybridFlow (2 NFE)": (xs, [r.energy_median for r in sweep.rows])},
        title="Sample quality vs re-noise ratio", xlabel="alpha = t_refine", ylabel="energy distance",
    )


def nfe_svg(sweep: Sweep) -> str:
    series = {}
    for mode, name in (("euler_reflow", "ReFlow Euler"), ("meanflow_multistep", "MeanFlow multi-step")):
        rows = [r for r in sweep.rows if r.mode == mode]
        series[name] = ([r.nfe for r in rows], [r.energy_median for r in rows])
    hyb = [r for r in sweep.rows if r.mode == "hybridflow"]
    series["HybridFlow"] = ([r.nfe for r in hyb], [r.energy_median for r in hyb])
    return svg.line_chart(series, title="Sample quality vs NFE", xlabel="NFE", ylabel="energy distance", logy=True)


def loss_svg(history: list[dict]) -> str:
    steps = [r["step"] for r in history]
    return svg.line_chart(
        {
            "ReFlow mode (r = t)": (steps, [r["val_loss_reflow_mode"] for r in history]),
            "MeanFlow mode (r < t)": (steps, [r["val_loss_meanflow_mode"] for r in history]),
        },
        title="Validation loss", xlabel="step", ylabel="excess MSE", logy=True,
    )


def write_sweep(out_dir, name: str, sweep: Sweep, header: str, chart: str) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    csv_path.write_text(sweep.to_csv(header), encoding="utf-8")
    svg_path = out / f"{name}.svg"
    svg_path.write_text(chart, encoding="utf-8")
    return csv_path, svg_path


def load_for_eval(ckpt) -> tuple[net.NetworkParams, tasks.TaskSpec | None, dict]:
    params, meta = net.load_checkpoint(ckpt)
    cfg = meta.get("config")
    task = tasks.TaskSpec.from_dict(cfg["task"]) if cfg else None
    return params, task, meta


def checkpoint_header(meta: dict) -> str:
    cfg = meta.get("config")
    h = ExperimentConfig.from_dict(cfg).config_hash() if cfg else "none"
    return csv_header(h, meta.get("seed") if meta.get("seed") is not None else -1)


# --- audits written by the demo ---------------------------------------------


def shift_table(params, task, seed: int, n: int = EVAL_N, alpha: float = DEFAULT_ALPHA) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sampler", "step", "stage", "t", "kl_proxy"])
    for spec in (SamplerSpec("meanflow_multistep", steps=8), SamplerSpec("euler_reflow", steps=16),
                 SamplerSpec("hybridflow", alpha=alpha)):
        rng = RngState(seed).split(EVAL_STREAM).split(3)
        for est in metrics.shift_audit(params, spec, task, n, rng):
            w.writerow([spec.label, est.step, est.label, repr(est.t), repr(est.kl)])
    return buf.getvalue()


def accumulation_table(params, task, seed: int, K: int = 8, n: int = 1000) -> tuple[str, metrics.AccumulationAudit]:
    rng = RngState(seed).split(EVAL_STREAM).split(4)
    audit = metrics.error_accumulation_audit(params, task, K, n, rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "mean_error", "mean_deviation", "lipschitz", "holds_fraction"])
    for row in audit.rows:
        w.writerow([row.step, repr(row.mean_error), repr(row.mean_deviation), repr(row.lipschitz),
                    repr(row.holds_fraction)])
    return buf.getvalue(), audit


# --- multi-seed study and demo -------------------------------------------------


@dataclass
class SeedOutcome:
    seed: int
    train: TrainResult
    nfe: Sweep
    alpha: Sweep


@dataclass
class StudyResult:
    outcomes: list[SeedOutcome] = field(default_factory=list)

    def median_energy(self, kind: str, label: str) -> float:
        vals = [getattr(o, kind).row(label).energy_median for o in self.outcomes]
        return float(np.median(vals))


def train_or_load(config: ExperimentConfig, out_dir, reuse: bool = False) -> TrainResult:
    """Train, or reuse a finished run in ``out_dir`` whose config hash matches."""
    out = Path(out_dir)
    ckpt, log_path, cfg_path = out / "checkpoint.json", out / "train_log.csv", out / "config.json"
    if reuse and ckpt.exists() and log_path.exists() and cfg_path.exists():
        if ExperimentConfig.load(cfg_path).config_hash() == config.config_hash():
            params, _ = net.load_checkpoint(ckpt)
            return TrainResult(ckpt, log_path, params, read_log(log_path))
    return train(config, out)


def study(seeds, out_dir, base: ExperimentConfig | None = None, n: int = EVAL_N, reuse: bool = False,
          grid=DEFAULT_ALPHA_GRID) -> StudyResult:
    """Train one model per seed and run both sweeps on it (evaluation seed = training seed)."""
    base = base or default_config()
    result = StudyResult()
    for seed in seeds:
        cfg = base.evolve(seed=seed, out_dir=str(Path(out_dir) / f"seed_{seed}"))
        tr = train_or_load(cfg, cfg.out_dir, reuse=reuse)
        nfe = sweep_nfe(tr.params, cfg.task, n=n, seeds=(seed,))
        alpha = sweep_alpha(tr.params, cfg.task, grid=grid, n=n, seeds=(seed,))
        result.outcomes.append(SeedOutcome(seed, tr, nfe, alpha))
    return result


def phenomena(train_history: list[dict], nfe: Sweep, alpha: Sweep) -> dict[str, float]:
    """Headline quantities of one run (single seed)."""
    mf1 = nfe.row("meanflow_multistep[K=1]").energy_median
    mf4 = nfe.row("meanflow_multistep[K=4]").energy_median
    eu16 = nfe.row("euler_reflow[K=16]").energy_median
    hyb = nfe.row(f"hybridflow[a={DEFAULT_ALPHA:g}]").energy_median
    return {
        "val_plateau_reflow": plateau(train_history, "val_loss_reflow_mode"),
        "val_plateau_meanflow": plateau(train_history, "val_loss_meanflow_mode"),
        "energy_meanflow_k1": mf1,
        "energy_meanflow_k4": mf4,
        "energy_euler_k16": eu16,
        "energy_hybridflow": hyb,
        "alpha_argmin": alpha.argmin if alpha.argmin is not None else float("nan"),
    }


def demo(seed: int = 0, out_dir="runs/demo", displacement_scaling: bool = True, fresh_renoise: bool = False,
         train_steps: int | None = None, latency_calls: int = LATENCY_CALLS) -> dict:
    """Full default pipeline: train, evaluate, both sweeps, audits, latency."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = default_config(seed=seed, out_dir=str(out / "train"))
    if train_steps is not None:
        cfg = cfg.evolve(train_steps=train_steps)
    t0 = perf_counter()
    tr = train(cfg, cfg.out_dir)
    header = csv_header(cfg.config_hash(), seed)
    (out / "train_curves.svg").write_text(loss_svg(tr.history), encoding="utf-8")

    flags = dict(displacement_scaling=displacement_scaling, fresh_noise_renoise=fresh_renoise)
    specs = nfe_specs(**flags)
    report = evaluate(tr.params, cfg.task, specs, seed=seed)
    report.write(out / "metrics.csv", header.lstrip("# ").rstrip("\n"))
    nfe = sweep_nfe(tr.params, cfg.task, seeds=(seed,), **flags)
    write_sweep(out, "sweep_nfe", nfe, header, nfe_svg(nfe))
    alpha = sweep_alpha(tr.params, cfg.task, seeds=(seed,), **flags)
    write_sweep(out, "sweep_alpha", alpha, header, alpha_svg(alpha))
    (out / "shift_audit.csv").write_text(header + shift_table(tr.params, cfg.task, seed), encoding="utf-8")
    acc_csv, _ = accumulation_table(tr.params, cfg.task, seed)
    (out / "error_accumulation.csv").write_text(header + acc_csv, encoding="utf-8")

    summary = phenomena(tr.history, nfe, alpha)
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in summary.items():
        w.writerow([k, repr(v)])
    (out / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")

    lat_specs = [SamplerSpec("meanflow_1step", **flags), SamplerSpec("euler_reflow", steps=16, **flags),
                 SamplerSpec("hybridflow", alpha=DEFAULT_ALPHA, **flags)]
    lat = measure_latency(tr.params, cfg.task, lat_specs, calls=latency_calls, seed=seed)
    (out / "latency.json").write_text(
        json.dumps({"median_seconds_per_sample": lat, "total_seconds": perf_counter() - t0}, indent=1) + "\n",
        encoding="utf-8",
    )
    log.info("demo finished in %.1f s", perf_counter() - t0)
    return summary
