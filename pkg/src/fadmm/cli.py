"""Command-line experiment runner.

    fadmm run <spec.conf | experiment-id> [--out DIR] [--seed N]
              [--n-paths N] [--n-steps N] [--threads N] [--mark MARK]
              [--n-grid N] [--no-recalibrate-psi]

The positional argument is either a flat key = value spec file or a bare
experiment id run with baseline parameters.  Exit codes: 0 success,
2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .experiments import EXPERIMENT_IDS, ExperimentSpec, run, spec_from_config
from .params import ConfigError, ModelParams, NumericError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fadmm")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a spec file or id")
    runp.add_argument("spec", help="path to a spec.conf or one of: "
                                   + ", ".join(EXPERIMENT_IDS))
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--n-paths", type=int, default=None)
    runp.add_argument("--n-steps", type=int, default=None)
    runp.add_argument("--threads", type=int, default=None)
    runp.add_argument("--mark", choices=("mid", "fundamental"), default=None)
    runp.add_argument("--n-grid", type=int, default=None)
    runp.add_argument("--no-recalibrate-psi", action="store_true",
                      help="keep psi_informed fixed instead of recalibrating")
    runp.add_argument("--quiet", action="store_true")
    return parser


def _load_spec(arg: str) -> ExperimentSpec:
    if os.path.isfile(arg):
        with open(arg, "r", encoding="utf-8") as fh:
            return spec_from_config(fh.read())
    if arg in EXPERIMENT_IDS:
        return ExperimentSpec(experiment=arg, params=ModelParams())
    raise ConfigError(f"{arg!r} is neither a spec file nor a known experiment id")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    log = (lambda *_: None) if args.quiet else print
    try:
        spec = _load_spec(args.spec)
        overrides = {}
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.n_paths is not None:
            overrides["n_paths"] = args.n_paths
        if args.n_steps is not None:
            overrides["n_steps"] = args.n_steps
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.mark is not None:
            overrides["mark"] = args.mark
        if args.n_grid is not None:
            overrides["n_grid"] = args.n_grid
        if args.no_recalibrate_psi:
            overrides["recalibrate_psi"] = False
        if overrides:
            spec = dataclasses.replace(spec, **overrides)
        outputs = run(spec, log=log)
    except ConfigError as exc:
        print(f"fadmm: configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"fadmm: numeric failure: {exc}", file=sys.stderr)
        return 3
    log("wrote: " + " ".join(outputs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
