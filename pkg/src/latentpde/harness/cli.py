"""Command-line front end.

Five subcommands (gen-data, train, solve, compare, bench) share one
config file; a handful of flags override the fields people actually
sweep. Exit codes are a stable scripting contract: 0 success, 1 a
numerical failure (blowup, divergence), 2 a usage or format problem.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional, Sequence

from ..errors import (
    DatasetError,
    DimensionError,
    DivergenceError,
    DomainMismatchError,
    FormatError,
    InvalidSpecError,
    InvalidStateError,
    NumericalBlowupError,
    TrainingDivergedError,
    UsageError,
)
from ..hybrid import CoarseGridInit, ZeroFieldInit
from .commands import cmd_bench, cmd_compare, cmd_gen_data, cmd_solve, cmd_train
from .config import ExperimentConfig

NUMERICAL_ERRORS = (NumericalBlowupError, DivergenceError, TrainingDivergedError)
USAGE_ERRORS = (
    FormatError,
    InvalidSpecError,
    UsageError,
    DatasetError,
    DimensionError,
    DomainMismatchError,
    InvalidStateError,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="output location (default: under the config's out_dir)")
    p.add_argument("--seed", type=int, help="override the dataset base seed")
    p.add_argument("--tol", type=float, help="override the hybrid convergence tolerance")
    p.add_argument("--max-iter", type=int, help="override the hybrid iteration cap")
    p.add_argument("--alpha", type=float, help="override the hybrid update blend factor")
    p.add_argument("--init", choices=("coarse", "zero"), help="override the hybrid initialization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentpde",
        description="latent-space hybrid PDE experiments: data, training, solving, comparison",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate (or resume) the train/test dataset")
    _add_common(p)

    p = sub.add_parser("train", help="train condition and solution autoencoders")
    _add_common(p)
    p.add_argument("--dataset", help="dataset directory (default: <out_dir>/dataset)")

    p = sub.add_parser("solve", help="hybrid-solve one case")
    _add_common(p)
    p.add_argument("--bundle", help="model bundle directory (default: <out_dir>/bundle)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--index", type=int, help="test-stream case index")
    src.add_argument("--source", help="mixture spec (.json) or binary field file")

    p = sub.add_parser("compare", help="hybrid vs reference on test cases, with plots")
    _add_common(p)
    p.add_argument("--bundle", help="model bundle directory (default: <out_dir>/bundle)")
    p.add_argument("--indices", help="comma-separated case indices (default: all test cases)")

    p = sub.add_parser("bench", help="wall-time statistics, hybrid vs reference")
    _add_common(p)
    p.add_argument("--bundle", help="model bundle directory (default: <out_dir>/bundle)")
    p.add_argument("--n-cases", type=int, default=100, help="number of timed cases")

    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        config = dataclasses.replace(
            config, dataset=dataclasses.replace(config.dataset, seed=args.seed)
        )
    hybrid = config.hybrid
    changes = {}
    if args.tol is not None:
        changes["tol"] = args.tol
    if args.max_iter is not None:
        changes["max_iter"] = args.max_iter
    if args.alpha is not None:
        changes["damping"] = args.alpha
    if args.init is not None:
        changes["init"] = CoarseGridInit() if args.init == "coarse" else ZeroFieldInit()
    if changes:
        config = dataclasses.replace(config, hybrid=dataclasses.replace(hybrid, **changes))
    return config


def _parse_indices(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"--indices expects comma-separated integers, got {text!r}") from None


def _bundle_path(config: ExperimentConfig, args):
    return args.bundle if args.bundle is not None else config.out_dir / "bundle"


def _run(args) -> None:
    config = _apply_overrides(ExperimentConfig.load(args.config), args)

    if args.command == "gen-data":
        root = cmd_gen_data(config, out=args.out)
        print(f"dataset complete: {config.dataset.n_train} train + "
              f"{config.dataset.n_test} test under {root}")
    elif args.command == "train":
        bundle = cmd_train(config, dataset_root=args.dataset, out=args.out)
        print(f"bundle written to {bundle}")
    elif args.command == "solve":
        source = args.index if args.index is not None else args.source
        out, report = cmd_solve(config, _bundle_path(config, args), source, out=args.out)
        state = "converged" if report.converged else "hit the iteration cap"
        print(f"{state} after {report.iterations} iterations; outputs under {out}")
    elif args.command == "compare":
        indices = _parse_indices(args.indices) if args.indices is not None else None
        out, aggregate = cmd_compare(config, _bundle_path(config, args), indices, out=args.out)
        med = aggregate["median_rel_l2"]
        summary = ", ".join(f"{k}={v:.3g}" for k, v in med.items())
        print(f"{aggregate['n_converged']}/{aggregate['n_cases']} converged; "
              f"median relative L2: {summary}; outputs under {out}")
    else:
        out, report = cmd_bench(config, _bundle_path(config, args), args.n_cases, out=args.out)
        if report["hybrid"] is None:
            print(f"no case converged ({report['n_cases']} attempted); see {out}")
        else:
            print(f"hybrid mean {report['hybrid']['mean']:.4g}s vs reference mean "
                  f"{report['reference']['mean']:.4g}s (speedup {report['speedup']:.3g}); "
                  f"{report['n_non_converged']} non-converged excluded; outputs under {out}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    try:
        _run(args)
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
