"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 oracle check failed, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import tasks
from ..numkit import DomainError
from ..samplers import SamplerSpec
from . import experiments, oracle_check
from .config import ExperimentConfig
from .training import TrainingDivergedError, train

EXIT_OK, EXIT_INVALID, EXIT_ORACLE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("hybridflow")


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not oracle failures (argparse would exit 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc


def _flags(args) -> dict:
    return dict(displacement_scaling=not args.literal_eq12, fresh_noise_renoise=args.fresh_renoise)


def _ckpt_task(args):
    params, task, meta = experiments.load_for_eval(args.ckpt)
    if getattr(args, "task", None):
        task = tasks.make_task(args.task)
    if task is None:
        raise DomainError("checkpoint carries no task; pass --task")
    return params, task, meta


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.evolve(seed=args.seed)
    out = args.out or cfg.out_dir
    res = train(cfg, out)
    print(f"checkpoint: {res.checkpoint}")
    print(f"log: {res.log}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, task, meta = _ckpt_task(args)
    specs = [SamplerSpec.parse(s, **_flags(args)) for s in args.samplers.split(",") if s.strip()]
    seed = args.seed if args.seed is not None else 0
    report = experiments.evaluate(params, task, specs, n=args.n, seed=seed, timing=args.timing)
    text = report.to_csv(experiments.checkpoint_header(meta).lstrip("# ").rstrip("\n"))
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _sweep(args, kind: str) -> int:
    params, task, meta = _ckpt_task(args)
    seed = args.seed if args.seed is not None else 0
    if kind == "alpha":
        sweep = experiments.sweep_alpha(params, task, grid=args.grid, n=args.n, seeds=(seed,), **_flags(args))
        chart = experiments.alpha_svg(sweep)
    else:
        sweep = experiments.sweep_nfe(params, task, n=args.n, seeds=(seed,), **_flags(args))
        chart = experiments.nfe_svg(sweep)
    header = experiments.checkpoint_header(meta)
    out = Path(args.out or ".")
    csv_path, svg_path = experiments.write_sweep(out, f"sweep_{kind}", sweep, header, chart)
    sys.stdout.write(sweep.to_csv(header))
    if sweep.argmin is not None:
        print(f"# argmin alpha = {sweep.argmin:g}")
    print(f"# wrote {csv_path} and {svg_path}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    results = oracle_check.run_checks(fast=args.fast)
    print(oracle_check.report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_ORACLE


def cmd_demo(args) -> int:
    seed = args.seed if args.seed is not None else 0
    summary = experiments.demo(
        seed=seed, out_dir=args.out or "runs/demo", displacement_scaling=not args.literal_eq12,
        fresh_renoise=args.fresh_renoise, train_steps=args.train_steps,
    )
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def cmd_study(args) -> int:
    seeds = range(args.seeds) if args.seed is None else [args.seed]
    res = experiments.study(seeds, args.out or "runs/study", n=args.n, reuse=args.reuse)
    for label in ("meanflow_multistep[K=1]", "meanflow_multistep[K=4]", "euler_reflow[K=16]",
                  f"hybridflow[a={experiments.DEFAULT_ALPHA:g}]"):
        print(f"{label:28s} median energy {res.median_energy('nfe', label):.5g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--literal-eq12", action="store_true",
                        help="multi-step: plain u step without (t - r) displacement scaling")
    common.add_argument("--fresh-renoise", action="store_true", help="re-noise with a fresh Gaussian draw")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="hybridflow", description="HybridFlow / MeanFlow toy-scale harness")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", parents=[common], help="train from a JSON config")
    s.add_argument("--config", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="score samplers on a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--task", default=None)
    s.add_argument("--samplers", default="meanflow_1step,euler_reflow:16,hybridflow:0.15",
                   help="comma list of mode[:arg]")
    s.add_argument("--n", type=int, default=experiments.EVAL_N)
    s.add_argument("--timing", action="store_true", help="add per-sample wall time (not reproducible)")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sweep-alpha", parents=[common], help="HybridFlow quality over alpha")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--task", default=None)
    s.add_argument("--grid", type=_grid, default=list(experiments.DEFAULT_ALPHA_GRID))
    s.add_argument("--n", type=int, default=experiments.EVAL_N)
    s.set_defaults(fn=lambda a: _sweep(a, "alpha"))

    s = sub.add_parser("sweep-nfe", parents=[common], help="quality vs NFE for every sampler family")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--task", default=None)
    s.add_argument("--n", type=int, default=experiments.EVAL_N)
    s.set_defaults(fn=lambda a: _sweep(a, "nfe"))

    s = sub.add_parser("oracle-check", parents=[common], help="closed forms vs independent references")
    s.add_argument("--fast", action="store_true", help="fewer cases and Monte-Carlo draws")
    s.set_defaults(fn=cmd_oracle_check)

    s = sub.add_parser("demo", parents=[common], help="full default pipeline")
    s.add_argument("--train-steps", type=int, default=None)
    s.set_defaults(fn=cmd_demo)

    s = sub.add_parser("study", parents=[common], help="train and sweep several seeds")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--n", type=int, default=experiments.EVAL_N)
    s.add_argument("--reuse", action="store_true", help="reuse finished runs with a matching config hash")
    s.set_defaults(fn=cmd_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, KeyError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
