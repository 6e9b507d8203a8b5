"""Command-line entry point: ``koopfuse <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import pipeline
from .errors import NumericalError, ValidationError
from .pipeline import RunConfig

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _add_run_options(p, seed_required=False):
    p.add_argument("--config", help="JSON file with RunConfig fields overriding the defaults")
    p.add_argument("--workdir", help="working directory holding every stage's files")
    p.add_argument("--seed", type=int, required=seed_required, dest="rng_seed",
                   help="root seed; child seeds are spawned per trajectory batch")
    p.add_argument("--n-trajectories", type=int)
    p.add_argument("--pairs-per-trajectory", type=int)
    p.add_argument("--burn-in", type=float)
    p.add_argument("--heldout-pairs", type=int)
    p.add_argument("--pca-modes", type=int)
    p.add_argument("--location", type=float)
    p.add_argument("--svd-tol", type=float)
    p.add_argument("--match-rtol", type=float)
    p.add_argument("--match-atol", type=float)
    p.add_argument("--trust-threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    top = {k: getattr(args, k, None) for k in
           ("workdir", "rng_seed", "heldout_pairs", "pca_modes", "location", "svd_tol",
            "match_rtol", "match_atol", "trust_threshold")}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in top.items() if v is not None})
    traj = {"n_trajectories": getattr(args, "n_trajectories", None),
            "pairs_per_trajectory": getattr(args, "pairs_per_trajectory", None),
            "burn_in": getattr(args, "burn_in", None)}
    traj = {k: v for k, v in traj.items() if v is not None}
    if traj:
        cfg = dataclasses.replace(cfg, trajectories=dataclasses.replace(cfg.trajectories, **traj))
    return cfg


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="koopfuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate PCA, pointwise, joint and held-out data")
    _add_run_options(p, seed_required=True)

    p = sub.add_parser("pca", help="PCA basis and coefficient series")
    _add_run_options(p)

    p = sub.add_parser("edmd", help="EDMD decomposition of one dataset (or both, without --dataset)")
    _add_run_options(p)
    p.add_argument("--dataset", help="series CSV; default: both datasets of the working directory")
    p.add_argument("--out", help="output decomposition directory (with --dataset)")
    p.add_argument("--dictionary", choices=("mls", "linear"), default="mls")
    p.add_argument("--max-per-cell", type=int, default=24)
    p.add_argument("--cover-factor", type=float, default=2.5)
    p.add_argument("--no-whiten", action="store_true")

    p = sub.add_parser("fuse-build", help="match, register and store a fusion model")
    _add_run_options(p)
    p.add_argument("--target", help="target decomposition directory")
    p.add_argument("--source", help="source decomposition directory")
    p.add_argument("--joint", help="joint-pair CSV")
    p.add_argument("--target-data", help="target training series CSV")
    p.add_argument("--source-data", help="source training series CSV")
    p.add_argument("--out", help="model directory")

    p = sub.add_parser("fuse-apply", help="estimate target measurements from source rows")
    _add_run_options(p)
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--output")

    p = sub.add_parser("evaluate", help="relative errors of predictions against truth")
    _add_run_options(p)
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--window", type=float, action="append",
                   help="window length from the first timestamp (repeatable)")
    p.add_argument("--model", help="model directory whose eigenvalues and alpha go in the report")
    p.add_argument("--out")

    p = sub.add_parser("reproduce", help="run every stage in sequence")
    _add_run_options(p)
    return parser


def run(args) -> None:
    cfg = build_config(args)
    v = args.verbose
    cmd = args.command
    if cmd == "simulate":
        cfg.path().mkdir(parents=True, exist_ok=True)
        cfg.save(cfg.path("config.json"))
        pipeline.cmd_simulate(cfg, v)
    elif cmd == "pca":
        pipeline.cmd_pca(cfg, v)
    elif cmd == "edmd":
        if args.dataset is None:
            pipeline.run_edmd_stage(cfg, v)
        else:
            if args.out is None:
                raise ValidationError("--out is required with --dataset")
            settings = pipeline.SensorSettings(args.max_per_cell, args.cover_factor)
            pipeline.cmd_edmd(args.dataset, args.out, settings, cfg.svd_tol, args.dictionary,
                              not args.no_whiten, v)
    elif cmd == "fuse-build":
        pipeline.cmd_fuse_build(
            args.target or cfg.path("edmd", "pca"), args.source or cfg.path("edmd", "pointwise"),
            args.joint or cfg.path("pca", "joint.csv"), args.target_data or cfg.path("pca", "pca.csv"),
            args.source_data or cfg.path("data", "pointwise.csv"), args.out or cfg.path("model"), cfg, v)
    elif cmd == "fuse-apply":
        pipeline.cmd_fuse_apply(args.model or cfg.path("model"),
                                args.input or cfg.path("data", "heldout_pointwise.csv"),
                                args.output or cfg.path("predictions.csv"), v)
    elif cmd == "evaluate":
        model = args.model
        if model is None and args.pred is None:
            model = cfg.path("model")
        pipeline.cmd_evaluate(args.pred or cfg.path("predictions.csv"),
                              args.truth or cfg.path("pca", "heldout_truth.csv"),
                              args.window or cfg.windows, args.out or cfg.path("report.json"), model, v)
    elif cmd == "reproduce":
        pipeline.reproduce(cfg, v)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
