"""Command line entry point: ``pdfpm run ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import PDFPMError
from .fdgrad import GradientMode, LambdaPolicy
from .harness import DEFAULT_GRID, DEFAULT_DELTAS, ExperimentSpec, comparison_table, run_experiment
from .scaling import ScalingStrategy
from .solver import SolverConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _float_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="pdfpm", description="Multi-start PDFPM experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a delta sweep of multi-start experiments")
    p.add_argument("--problem", default="aas1", help="aas1, aas2 or a JSON problem document")
    p.add_argument("--delta", type=_float_list, default=list(DEFAULT_DELTAS),
                   help="uncertainty levels, comma separated (default: 0,0.02,0.05,0.1)")
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    modes = [m.value for m in GradientMode]
    p.add_argument("--grad-mode", default="central",
                   help=f"one of {modes}, or one mode per objective separated by commas")
    p.add_argument("--b-strategy", default="bfgs", choices=[s.value for s in ScalingStrategy])
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--lambda-floor", type=float, default=0.0,
                   help="lower bound on the difference step (default: none)")
    p.add_argument("--b-bound", type=float, default=1e4, help="bound on the scaling matrices")
    p.add_argument("--plot", action="store_true", help="write SVG scatter plots (two objectives)")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID, help="grid resolution of the plots")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        modes = args.grad_mode.split(",")
        config = SolverConfig(
            alpha=args.alpha,
            eps=args.eps,
            sigma0=args.sigma0,
            max_iter=args.max_iter,
            grad_mode=modes[0] if len(modes) == 1 else tuple(modes),
            b_strategy=args.b_strategy,
            lambda_policy=LambdaPolicy(floor=args.lambda_floor),
            b_bound=args.b_bound,
        )
        spec = ExperimentSpec(
            problem=args.problem,
            deltas=tuple(args.delta),
            runs=args.runs,
            seed=args.seed,
            config=config,
            out_dir=args.out,
            plot=args.plot,
            grid=args.grid,
        )
        report = run_experiment(spec)
    except (PDFPMError, ValueError) as exc:
        print(f"pdfpm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"pdfpm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(comparison_table(report))
    print(f"{len(report.files)} files written to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
