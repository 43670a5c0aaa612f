"""Command-line entry point.

    shellgrade run <config|benchmark> --out DIR [--scale paper|desk] [--max-iters N] [--fd-check [K]]
    shellgrade config <benchmark> [--scale paper|desk] [-o FILE]

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 FD-check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .analysis import Model
from .fem import FEMError
from .geometry import GeometryError
from .optimizer import OptimizationError, run
from .problems import BENCHMARKS, ConfigError, ProblemConfig
from .sensitivity import finite_difference_check

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FD = 0, 2, 3, 4

log = logging.getLogger("shellgrade")


def load_problem(source: str, scale: str = "desk") -> ProblemConfig:
    """A benchmark name or a config file path."""
    if source in BENCHMARKS:
        return BENCHMARKS[source](scale)
    return io.parse_config(source)


def fd_indices(n: int, k: int) -> np.ndarray:
    """``k`` variable indices spread over ``n`` with a fixed stride."""
    k = max(1, min(k, n))
    return np.arange(k) * (n // k)


def write_outputs(result, problem: ProblemConfig, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    an, grid = result.analysis, result.model.grid
    written = [out / "config.cfg"]
    io.write_config(problem, written[0])
    opts = problem.output
    if opts.history:
        written.append(out / "history.csv")
        io.write_history_csv(result.records, written[-1])
    if opts.raster:
        written.append(out / "density.pgm")
        io.write_density_raster(an.densities, grid, written[-1])
    if opts.boundaries:
        written.append(out / "boundaries.svg")
        polylines = io.extract_boundaries(np.asarray(an.ctx.phi_s, dtype=float), grid)
        io.write_boundaries_svg(polylines, written[-1], problem.domain)
    if opts.control_points:
        written.append(out / "control_points.csv")
        io.write_control_points_csv(an.shell, written[-1])
    return written


def cmd_run(args) -> int:
    problem = load_problem(args.config, args.scale)
    problem = io.with_overrides(problem, args.max_iters).validate()
    model = Model.from_problem(problem)
    log.info("%s: %d x %d mesh, %d design variables", problem.name, *problem.mesh, len(model.layout))
    if args.fd_check is not None:
        idx = fd_indices(len(model.layout), args.fd_check)
        report = finite_difference_check(model.layout.initial(), problem, subset=idx.tolist(), model=model)
        print(report.summary())
        if not report.passed:
            return EXIT_FD

    def progress(rec, _an):
        log.info("iter %3d  C %.6g  V %.4f  Vin %.4f  change %.3g", rec.iter, rec.compliance, rec.volume_fraction,
                 rec.infill_volume_fraction, rec.max_rel_change)

    result = run(problem, model=model, callback=progress)
    for path in write_outputs(result, problem, Path(args.out)):
        log.info("wrote %s", path)
    status = "converged" if result.converged else "stopped at the iteration limit"
    print(f"{problem.name}: C = {result.compliance:.6g} after {len(result.records) - 1} iterations ({status})")
    return EXIT_OK


def cmd_config(args) -> int:
    text = io.serialize_config(load_problem(args.benchmark, args.scale))
    if args.output:
        Path(args.output).write_text(text, newline="\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shellgrade", description="Shell-graded-infill topology optimization")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize a config file or a named benchmark")
    p.add_argument("config", help=f"config file or one of: {', '.join(BENCHMARKS)}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk", help="benchmark size (names only)")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--fd-check", type=int, nargs="?", const=10, default=None, metavar="K",
                   help="finite-difference check of K variables before optimizing (default 10)")
    p.set_defaults(func=cmd_run)

    c = sub.add_parser("config", help="print a benchmark as a config file")
    c.add_argument("benchmark", choices=sorted(BENCHMARKS))
    c.add_argument("--scale", choices=("desk", "paper"), default="desk")
    c.add_argument("-o", "--output", help="write to a file instead of stdout")
    c.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OptimizationError as exc:
        print(f"numerical failure: {exc.dump()}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FEMError, GeometryError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
