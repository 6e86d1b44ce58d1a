"""Command-line entry point.

Subcommands: gen-data, train, eval, sweep-threshold.  Every command is
reproducible from its config file and seed alone.  Exit codes: 0 success,
2 configuration error, 3 missing dependency, 4 I/O error, 5 training
failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig, config_from_dict, load_config
from .errors import (
    CheckpointError,
    CheckpointIncompatibleError,
    ConfigError,
    DependencyError,
    InvalidArgumentError,
    PoseAdaptError,
    TrainingFailureError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_IO = 4
EXIT_TRAINING = 5


def build_parser():
    p = argparse.ArgumentParser(prog="poseadapt",
                                description="Sim2Real pose-regression adaptation experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--scalar-task", action="store_true",
                        help="use the scalar-target task variant")

    sp = sub.add_parser("gen-data", help="generate the benchmark dataset")
    common(sp)

    sp = sub.add_parser("train", help="train one stage")
    common(sp)
    sp.add_argument("--stage", required=True,
                    choices=["teacher", "student", "baseline-regression", "no-ctc"])

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("sweep-threshold", help="confidence-threshold sweep")
    common(sp)
    sp.add_argument("--stage", default="teacher",
                    choices=["teacher", "no-ctc"],
                    help="which trained annotator to sweep")
    return p


def resolve_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.scalar_task:
        overrides["scalar_task"] = True
    if args.config is not None:
        return load_config(args.config, overrides)
    return config_from_dict(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from . import experiment
    try:
        cfg = resolve_config(args)
        if args.command == "gen-data":
            experiment.run_gen_data(cfg)
        elif args.command == "train":
            experiment.run_train(cfg, args.stage)
        elif args.command == "eval":
            experiment.run_eval(cfg, args.checkpoint)
        elif args.command == "sweep-threshold":
            experiment.run_sweep(cfg, stage=args.stage)
    except (ConfigError, CheckpointIncompatibleError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DependencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except TrainingFailureError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (CheckpointError, OSError, PoseAdaptError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
