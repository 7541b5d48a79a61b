"""Command-line interface for the experiment pipeline.

Subcommands mirror the stage graph: ``generate`` writes worlds and sensor
logs, ``fingerprint`` surveys and trains the radio-map network, ``run``
produces per-method trajectory estimates, ``evaluate`` scores them, and
``all`` chains every stage.  Stages are restartable and deterministic, so
rerunning any of them rewrites byte-identical artifacts.

Configuration comes from ``--config`` (JSON), patched by ``--seed`` and
repeated ``--set section.field=value`` overrides.  The output directory is
``--out``, else ``$FUSELOCATE_OUT``, else the config's ``out_dir``.

Exit codes: 0 success, 2 bad configuration, 3 file IO failure, 4 missing
upstream artifact, 5 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import (METHODS, ConfigError, ExperimentConfig, apply_overrides,
                     load_config)
from .experiment import (MissingArtifactError, Workspace, cmd_evaluate,
                         cmd_fingerprint, cmd_generate, cmd_run)
from .fingerprint import TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_NUMERICAL = 5

_FINGERPRINT_STAGES = ("collect", "train", "predict", "eval", "all")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="JSON experiment configuration "
                             "(defaults apply when omitted)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override master_seed")
    common.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="parallel worker processes (default 1)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (else $FUSELOCATE_OUT, "
                             "else the config's out_dir)")
    common.add_argument("--set", action="append", default=[], metavar="K=V",
                        dest="overrides",
                        help="config override, e.g. sensors.lidar_beams=120 "
                             "(repeatable)")

    parser = argparse.ArgumentParser(
        prog="fuselocate",
        description="Seedable indoor-localization experiments: Wi-Fi "
                    "fingerprinting, LiDAR/IMU positioning and EKF fusion "
                    "on synthetic corridor worlds.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common],
                   help="write world, ground-truth and sensor-log artifacts")
    fp = sub.add_parser("fingerprint", parents=[common],
                        help="survey, train and check the radio-map network")
    fp.add_argument("stage", nargs="?", default="all",
                    choices=_FINGERPRINT_STAGES,
                    help="substage to run (default: all)")
    run = sub.add_parser("run", parents=[common],
                         help="produce trajectory estimates")
    run.add_argument("method", nargs="?", default=None, choices=METHODS,
                     help="estimator to run (default: every configured one)")
    sub.add_parser("evaluate", parents=[common],
                   help="score estimates; write report, tables and overlays")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    return parser


def _resolve(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if overrides:
        config = apply_overrides(config, overrides)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    out_dir = args.out or os.environ.get("FUSELOCATE_OUT") or config.out_dir
    return config, out_dir


def _do_generate(config, out_dir, jobs):
    artifacts = cmd_generate(config, out_dir, jobs=jobs)
    print(f"generate: {len(artifacts)} artifacts under {out_dir}")


def _do_fingerprint(config, out_dir, jobs, stage):
    artifacts = cmd_fingerprint(config, out_dir, stage=stage, jobs=jobs)
    print(f"fingerprint {stage}: {len(artifacts)} artifacts under {out_dir}")


def _do_run(config, out_dir, jobs, method):
    methods = [method] if method else list(config.runs.methods)
    for m in methods:
        artifacts = cmd_run(config, out_dir, m, jobs=jobs)
        print(f"run {m}: {len(artifacts)} artifacts under {out_dir}")


def _do_evaluate(config, out_dir):
    result = cmd_evaluate(config, out_dir)
    by_run = {}
    for run_id, _floor, _direction, method, mean_m, *_ in result.rows:
        by_run.setdefault(run_id, []).append(f"{method} {mean_m:.3f} m")
    for run_id, cells in by_run.items():
        winner = result.winners.get(run_id, "-")
        print(f"{run_id}: {'  '.join(cells)}  -> best {winner}")
    ws = Workspace(out_dir)
    print(f"report: {ws.report_csv()}")
    for message in result.warnings:
        print(f"warning: {message}", file=sys.stderr)
    for message in result.omissions:
        print(f"warning: skipped {message}", file=sys.stderr)
    if not result.rows:
        print("warning: no estimates found; report has header only",
              file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, out_dir = _resolve(args)
        if args.command == "generate":
            _do_generate(config, out_dir, args.jobs)
        elif args.command == "fingerprint":
            _do_fingerprint(config, out_dir, args.jobs, args.stage)
        elif args.command == "run":
            _do_run(config, out_dir, args.jobs, args.method)
        elif args.command == "evaluate":
            _do_evaluate(config, out_dir)
        elif args.command == "all":
            _do_generate(config, out_dir, args.jobs)
            _do_fingerprint(config, out_dir, args.jobs, "all")
            _do_run(config, out_dir, args.jobs, None)
            _do_evaluate(config, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (TrainingDivergedError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
