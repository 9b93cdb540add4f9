"""Training loop: unified MeanFlow/ReFlow objective, logging and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter

import numpy as np

from .. import flowcore, metrics, net, tasks
from ..numkit import RngState
from .config import ExperimentConfig

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "wall_ms", "train_loss", "val_loss_reflow_mode", "val_loss_meanflow_mode", "seed"]

# RNG stream layout under the experiment seed.
STREAM_INIT, STREAM_DATA, STREAM_VAL = 0, 1, 2


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    params: net.NetworkParams
    history: list[dict]

    def plateau(self, column: str, fraction: float = 0.1) -> float:
        """Median of a validation column over the last ``fraction`` of training."""
        return plateau(self.history, column, fraction)


def plateau(history: list[dict], column: str, fraction: float = 0.1) -> float:
    last = history[-1]["step"]
    cutoff = last - fraction * last
    vals = [row[column] for row in history if row["step"] >= cutoff]
    return float(np.median(vals))


def csv_header(config_hash: str, seed: int, extra: str = "") -> str:
    return f"# config_hash={config_hash} seed={seed}{(' ' + extra) if extra else ''}\n"


def learning_rate(config: ExperimentConfig, step: int) -> float:
    if config.lr_schedule == "constant" or config.train_steps == 0:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.train_steps))


def validation_sets(config: ExperimentConfig):
    rng = RngState(config.seed).split(STREAM_VAL)
    reflow = metrics.validation_batch(config.task, rng.split(0), config.val_size, "reflow")
    meanflow = metrics.validation_batch(config.task, rng.split(1), config.val_size, "meanflow")
    return reflow, meanflow


def _dump_batch(path: Path, step: int, batch: flowcore.PathBatch) -> None:
    doc = {"step": step}
    for name in ("x0", "z1", "c", "r", "t", "z_t", "v_star"):
        doc[name] = np.asarray(getattr(batch, name)).tolist()
    path.write_text(json.dumps(doc), encoding="utf-8")


def train(config: ExperimentConfig, out_dir=None) -> TrainResult:
    """Run the configured training and write checkpoint.json, train_log.csv, config.json.

    The log is bit-exact under a fixed seed unless ``record_wall_time`` is set;
    wall time always goes to timing.json.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")

    root = RngState(config.seed)
    params = net.init_params(config.arch, root.split(STREAM_INIT))
    state = net.AdamState.zeros_like(
        params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps
    )
    data_rng = root.split(STREAM_DATA)
    val_reflow, val_meanflow = validation_sets(config)
    oracle = tasks.gaussian_oracle(config.task)

    def evaluate(p):
        return (
            metrics.validation_loss(p, val_reflow, "reflow", oracle),
            metrics.validation_loss(p, val_meanflow, "meanflow", oracle),
        )

    history: list[dict] = []
    window: list[float] = []
    start = perf_counter()

    def record(step: int, p) -> None:
        vr, vm = evaluate(p)
        row = {
            "step": step,
            "wall_ms": (perf_counter() - start) * 1e3,
            "train_loss": float(np.mean(window)) if window else float("nan"),
            "val_loss_reflow_mode": vr,
            "val_loss_meanflow_mode": vm,
            "seed": config.seed,
        }
        history.append(row)
        window.clear()
        log.info("step %d train %.5g val reflow %.5g meanflow %.5g", step, row["train_loss"], vr, vm)

    record(0, params)
    for step in range(config.train_steps):
        batch = flowcore.make_path_batch(
            tasks.draw(config.task, data_rng, config.batch_size), data_rng, config.time_sampling
        )
        try:
            loss, params, state = flowcore.unified_loss_step(params, batch, state, learning_rate(config, step))
        except FloatingPointError as exc:
            dump = out / "nan_dump.json"
            _dump_batch(dump, step, batch)
            raise TrainingDivergedError(f"non-finite loss at step {step}; batch written to {dump}") from exc
        window.append(loss)
        done = step + 1
        if done % config.eval_every == 0 or done == config.train_steps:
            record(done, params)
    elapsed = perf_counter() - start

    ckpt = net.save_checkpoint(out / "checkpoint.json", params, config=config.to_dict(), seed=config.seed)
    log_path = out / "train_log.csv"
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(csv_header(config.config_hash(), config.seed))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([
                row["step"],
                f"{row['wall_ms']:.1f}" if config.record_wall_time else "",
                repr(row["train_loss"]) if np.isfinite(row["train_loss"]) else "",
                repr(row["val_loss_reflow_mode"]),
                repr(row["val_loss_meanflow_mode"]),
                row["seed"],
            ])
    (out / "timing.json").write_text(
        json.dumps({"train_seconds": elapsed, "steps": config.train_steps}, indent=1) + "\n", encoding="utf-8"
    )
    return TrainResult(ckpt, log_path, params, history)


def read_log(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = []
    for row in csv.DictReader(lines):
        rows.append({
            "step": int(row["step"]),
            "train_loss": float(row["train_loss"]) if row["train_loss"] else float("nan"),
            "val_loss_reflow_mode": float(row["val_loss_reflow_mode"]),
            "val_loss_meanflow_mode": float(row["val_loss_meanflow_mode"]),
            "seed": int(row["seed"]),
        })
    return rows
