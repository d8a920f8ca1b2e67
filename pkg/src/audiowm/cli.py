"""Command-line entry point: ``audiowm <command> [options]``.

Exit codes: 0 success, 1 other failure, 2 config error, 3 dependency error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (unknown keys are rejected)")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--steps", type=int, help="Euler steps for sampling (overrides sampler.n_steps)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1 for determinism)")

    parser = argparse.ArgumentParser(prog="audiowm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize water episodes and piano rolls")
    sub.add_parser("preprocess", parents=[common], help="spectrograms, normalization and policy demos")
    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("stage", choices=["ae", "wm", "policy"])
    p.add_argument("--task", choices=["water", "piano"], default="water")
    p.add_argument("--baseline", action="store_true", help="policy without the predicted-audio block")
    p = sub.add_parser("generate", parents=[common], help="predict the future of a wav or roll context")
    p.add_argument("input", help="context .wav, .csv roll or .mid file")
    p.add_argument("--windows", type=int, help="number of autoregressive windows")
    p = sub.add_parser("eval", parents=[common], help="closed-loop / F1 evaluation with the baseline arm")
    p.add_argument("task", choices=["water", "piano"])
    p.add_argument("--baseline", action="store_true", help="accepted for symmetry; both arms always run")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every primitive")
    p = sub.add_parser("plot", parents=[common], help="PGM preview of a .spec, .csv roll or .wav")
    p.add_argument("input")
    p.add_argument("--output", help="target .pgm path")
    return parser


def resolve_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.steps is not None:
        if args.steps < 1:
            from .config import ConfigError

            raise ConfigError("--steps must be >= 1")
        cfg.sampler.n_steps = args.steps
    return cfg


def _dispatch(args, cfg):
    from . import pipeline as pl

    if args.command == "synth":
        return pl.cmd_synth(cfg)
    if args.command == "preprocess":
        return pl.cmd_preprocess(cfg)
    if args.command == "train":
        return pl.cmd_train(cfg, args.stage, args.task, args.baseline)
    if args.command == "generate":
        return pl.cmd_generate(cfg, args.input, args.windows)
    if args.command == "eval":
        return pl.cmd_eval(cfg, args.task)
    if args.command == "gradcheck":
        return pl.cmd_gradcheck(cfg)
    if args.command == "plot":
        return pl.cmd_plot(cfg, args.input, args.output)
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("error: threadpoolctl is required", file=sys.stderr)
        return EXIT_DEPENDENCY

    from .config import ConfigError
    from .pipeline import DependencyError, StageError
    from .tensor import NonFiniteError

    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    import numpy as np

    try:
        # the non-finite guard names the failing node; numpy's own warnings are noise here
        with threadpool_limits(limits=args.threads), np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            entry = _dispatch(args, cfg)
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NonFiniteError as exc:
        print(f"numeric failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, ValueError, OSError) as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = entry.pop("report", None)
    if report is not None:
        print("\n".join(report.lines()))
    print(json.dumps(entry, sort_keys=True))
    if args.command == "gradcheck" and not entry["metrics"]["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
