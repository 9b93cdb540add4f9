"""Experiment configuration and its JSON file form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..flowcore import TimeSamplingConfig
from ..net import NetworkArch
from ..numkit import DomainError
from ..tasks import TaskSpec, make_task

CONFIG_FORMAT = "hybridflow.config/1"


class ConfigError(DomainError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    arch: NetworkArch
    time_sampling: TimeSamplingConfig = field(default_factory=TimeSamplingConfig)
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    train_steps: int = 20000
    batch_size: int = 256
    eval_every: int = 500
    val_size: int = 4000
    seed: int = 0
    out_dir: str = "runs/default"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.arch.input_dim != self.task.dim or self.arch.cond_dim != self.task.cond_dim:
            raise ConfigError(
                f"arch dims ({self.arch.input_dim}, {self.arch.cond_dim}) do not match task "
                f"({self.task.dim}, {self.task.cond_dim})"
            )
        for name in ("batch_size", "eval_every", "val_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.train_steps < 0:
            raise ConfigError("train_steps must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        ts = self.time_sampling
        return {
            "format": CONFIG_FORMAT,
            "task": self.task.to_dict(),
            "arch": self.arch.to_dict(),
            "time_sampling": {
                "p_degenerate": ts.p_degenerate,
                "distribution": ts.distribution,
                "logit_mean": ts.logit_mean,
                "logit_std": ts.logit_std,
            },
            "optimizer": {
                "lr": self.lr, "lr_schedule": self.lr_schedule,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.adam_eps,
            },
            "train_steps": self.train_steps,
            "batch_size": self.batch_size,
            "eval_every": self.eval_every,
            "val_size": self.val_size,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "record_wall_time": self.record_wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if d.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format {d.get('format')!r}")
        try:
            task = TaskSpec.from_dict(d["task"])
            arch_d = dict(d.get("arch", {}))
            arch_d.setdefault("input_dim", task.dim)
            arch_d.setdefault("cond_dim", task.cond_dim)
            arch_d.setdefault("hidden", [128, 128, 128])
            opt = d.get("optimizer", {})
            return cls(
                task=task,
                arch=NetworkArch.from_dict(arch_d),
                time_sampling=TimeSamplingConfig(**d.get("time_sampling", {})),
                lr=float(opt.get("lr", 1e-3)),
                lr_schedule=opt.get("lr_schedule", "cosine"),
                beta1=float(opt.get("beta1", 0.9)),
                beta2=float(opt.get("beta2", 0.999)),
                adam_eps=float(opt.get("eps", 1e-8)),
                train_steps=int(d.get("train_steps", 20000)),
                batch_size=int(d.get("batch_size", 256)),
                eval_every=int(d.get("eval_every", 500)),
                val_size=int(d.get("val_size", 4000)),
                seed=int(d.get("seed", 0)),
                out_dir=str(d.get("out_dir", "runs/default")),
                record_wall_time=bool(d.get("record_wall_time", False)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def render(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render(), encoding="utf-8")
        return path

    def config_hash(self) -> str:
        """Short digest of everything except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def evolve(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def default_config(task: str = "cond_gmm2d", seed: int = 0, **overrides) -> ExperimentConfig:
    """The desk-scale default recipe: 3x128 SiLU MLP, batch 256, 20k cosine Adam steps."""
    spec = make_task(task)
    arch = NetworkArch(spec.dim, spec.cond_dim, (128, 128, 128))
    return ExperimentConfig(task=spec, arch=arch, seed=seed, **overrides)
