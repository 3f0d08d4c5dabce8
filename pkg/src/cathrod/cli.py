"""Command line entry point: ``cathrod run|sweep|oracle|compare``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cantilever import CantileverProblem, OracleRangeError, resample_by_arclength, solve
from .metrics import (UNIT_SCALE, CurveFormatError, ErrorReport, area_error, read_centerline,
                      tip_error, write_centerline)
from .rod import ConfigurationError
from .scenario import (ScenarioError, load_config, run_scenario, run_sweep, summary_row,
                       write_outputs)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (np.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1")
    return value


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; subcommands repeat them without defaults so either position works."""
    common = argparse.ArgumentParser(add_help=False)

    def default(value):
        return argparse.SUPPRESS if suppress else value

    common.add_argument("--out-dir", default=default("cathrod_out"), help="output directory")
    common.add_argument("--threads", type=_threads, default=default(1),
                        help="sweep worker processes")
    common.add_argument("--seed", type=int, default=default(None),
                        help="reserved; the simulations are deterministic")
    common.add_argument("--units", choices=sorted(UNIT_SCALE), default=default(None),
                        help="units of input curve files (default m)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="cathrod", description="Cosserat-rod catheter simulator",
                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="run one scenario to rest")
    p.add_argument("config")

    p = sub.add_parser("sweep", parents=[common], help="run a scenario's parameter sweep")
    p.add_argument("config")

    p = sub.add_parser("oracle", parents=[common], help="analytical cantilever curve")
    load = p.add_mutually_exclusive_group(required=True)
    load.add_argument("--force", type=float, help="endpoint load F [N]")
    load.add_argument("--mass", type=float, help="hanging mass [kg]")
    p.add_argument("--length", type=float, required=True, help="L [m]")
    p.add_argument("--youngs", type=float, required=True, help="E [Pa]")
    p.add_argument("--radius", type=float, required=True, help="r [m]")
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--linear-check", action="store_true",
                   help="print the tip deflection over the small-load value F L^3 / 3EI")

    p = sub.add_parser("compare", parents=[common], help="error metrics between two curves")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--length", type=_positive, required=True, help="rod length L [m]")
    p.add_argument("--metric", choices=("tip", "area"), default="tip")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.units is not None:
        config = replace(config, reference=replace(config.reference, units=args.units))
    result = run_scenario(config)
    out = write_outputs(result, config, args.out_dir)
    line = {"name": result.name, "converged": result.converged, "steps": result.steps,
            "tip": [float(v) for v in result.tip], "errors": result.errors,
            "out_dir": str(out)}
    print(json.dumps(line, sort_keys=True))
    if not result.converged:
        print(f"cathrod: not converged: {result.failure}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    if config.sweep is None:
        raise ScenarioError(f"{args.config}: no [sweep] section")
    if args.units is not None:
        config = replace(config, reference=replace(config.reference, units=args.units))
    results = run_sweep(config, args.out_dir, threads=args.threads)
    for r in results:
        row = summary_row(r)
        print(f"{row['parameter']}={row['value']:g} converged={row['converged']} "
              f"steps={row['steps']} tip_deflection={row['tip_deflection_m']:.6g} "
              f"error={row['tip_error_fraction']:.6g}")
    print(f"summary: {Path(args.out_dir) / 'summary.csv'}")
    failed = [r for r in results if not r.converged]
    if failed:
        print(f"cathrod: {len(failed)} sweep run(s) did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_oracle(args) -> int:
    force = args.force if args.force is not None else args.mass * 9.80665
    for name, value in (("force", force), ("length", args.length), ("youngs", args.youngs),
                        ("radius", args.radius)):
        if not (np.isfinite(value) and value > 0):
            raise ScenarioError(f"--{name} must be positive, got {value}")
    if args.samples < 2:
        raise ScenarioError("--samples must be >= 2")
    problem = CantileverProblem.circular(force, args.length, args.youngs, args.radius)
    curve = solve(problem)
    xy = resample_by_arclength(problem, curve, args.samples)
    # simulation frame: rod along +x, load along -y
    pts = np.column_stack([xy[:, 0], -xy[:, 1]])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "oracle.csv"
    write_centerline(pts, path)
    info = {"alpha": problem.alpha, "phi0": curve.phi0, "tip": [float(v) for v in pts[-1]],
            "arc_length": float(np.sum(np.hypot(*np.diff(pts, axis=0).T))),
            "path": str(path)}
    if args.linear_check:
        linear = force * args.length ** 3 / (3.0 * args.youngs * problem.area_moment)
        info["linear_ratio"] = float(curve.tip[1] / linear)
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def _cmd_compare(args) -> int:
    units = args.units or "m"
    a = read_centerline(args.a, units=units)
    b = read_centerline(args.b, units=units)
    tip = tip_error(a, b, args.length)
    area = area_error(a, b, args.length) if args.metric == "area" else None
    report = ErrorReport(tip, area if area is not None else float("nan"), args.length)
    out = report.as_dict()
    out["metric"] = args.metric
    out["value"] = tip if args.metric == "tip" else area
    if area is None:
        out["area_error"] = None
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "oracle": _cmd_oracle,
            "compare": _cmd_compare}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigurationError, CurveFormatError, OracleRangeError) as exc:
        print(f"cathrod: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
