"""Command line entry point: ``dersched <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Optional, Sequence

from ..oracle import SolverError, deterministic_upper_bound
from .data import TraceError
from .results import FORMATS, emit_results
from .scenario import (SWEEP_AXES, ScenarioSpec, TraceConfig, build_instance, load_config,
                       noise_study, run_scenario, summarize, sweep, timing_benchmark)
from .validate import cross_oracle_suite, nonmyopia_rows, structural_suite

__all__ = ["EXIT_OK", "EXIT_INVALID", "EXIT_SOLVER", "build_parser", "main"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="YAML scenario file")
    p.add_argument("--trace", metavar="PATH", help="CSV trace, overrides trace.path")
    p.add_argument("--out", metavar="DIR", help="output directory (default: stdout)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--format", choices=FORMATS, default="records")
    p.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dersched",
        description="Co-optimize flexible demand and battery storage under NEM tariffs "
                    "with demand charges.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run every policy and the upper bound on one scenario"))
    p = sub.add_parser("sweep", help="run a scenario across one parameter axis")
    _common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, help="overrides sweep.axis")
    p.add_argument("--values", type=float, nargs="+", help="overrides sweep.values")
    p = sub.add_parser("validate", help="structural checks and oracle agreement")
    _common(p)
    p.add_argument("--instances", type=int, default=20, help="random instances per suite")
    _common(sub.add_parser("oracle", help="perfect-foresight upper bound only"))
    p = sub.add_parser("bench", help="LSPS planning time against horizon")
    _common(p)
    p.add_argument("--horizons", type=int, nargs="+", default=[24, 240, 2400, 24000])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--oracle-max-horizon", type=int, default=240)
    p = sub.add_parser("noise", help="LSPS under noisy generation forecasts")
    _common(p)
    p.add_argument("--levels", type=float, nargs="+", help="overrides noise.levels")
    p.add_argument("--seeds", type=int, help="overrides noise.seeds")
    return parser


def _spec(args) -> ScenarioSpec:
    spec = load_config(args.config) if args.config else ScenarioSpec()
    if args.trace:
        spec = dataclasses.replace(spec, trace=dataclasses.replace(spec.trace, path=args.trace))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return spec


def _disclosure(spec: ScenarioSpec) -> str:
    tr: TraceConfig = spec.trace
    if tr.synthetic:
        return (f"scenario {spec.name}: synthetic trace, horizon {tr.horizon}, "
                f"g = {tr.peak_generation} * max(0, sin(pi (t - 6) / 12)), "
                f"jitter {tr.jitter}, base demand {tr.base_demand}, seed {spec.seed}")
    return f"scenario {spec.name}: trace {tr.path}"


def _emit(report, args, name, header=None):
    text = emit_results(report, args.format, args.out, name, header)
    if args.out is None:
        sys.stdout.write(text)


def _run(args) -> int:
    spec = _spec(args)
    _emit(run_scenario(spec), args, "run", _disclosure(spec))
    return EXIT_OK


def _sweep(args) -> int:
    spec = _spec(args)
    axis = args.axis or (spec.sweep.axis if spec.sweep else None)
    values = args.values or (list(spec.sweep.values) if spec.sweep else None)
    if axis is None or not values:
        raise ValueError("sweep needs an axis and values (config 'sweep' or --axis/--values)")
    report = sweep(spec, axis, values, workers=args.parallel)
    _emit(report, args, "sweep", _disclosure(spec))
    _emit(summarize(report), args, "summary")
    return EXIT_OK


def _validate(args) -> int:
    seed = 0 if args.seed is None else args.seed
    structural = structural_suite(args.instances, seed)
    oracles = cross_oracle_suite(args.instances, seed)
    flips = nonmyopia_rows()
    _emit(structural, args, "structural")
    _emit(oracles, args, "cross_oracle")
    _emit(flips, args, "nonmyopia")
    ok = (all(r.passed for r in structural) and all(r.passed for r in oracles)
          and all(r["depends_on_future"] for r in flips))
    return EXIT_OK if ok else EXIT_INVALID


def _oracle(args) -> int:
    spec = _spec(args)
    trace, tariff, fleet, battery, s0 = build_instance(spec)
    sol = deterministic_upper_bound(trace, tariff, fleet, battery, s0, method=spec.oracle_method)
    rec = {"scenario": spec.name, "method": sol.method, "objective": sol.objective,
           "dual_bound": sol.dual_bound, "peak": sol.peak, "gap": sol.gap,
           "primal_residual": sol.primal_residual, "iterations": sol.iterations,
           "simultaneous_steps": sol.simultaneous_steps}
    _emit([rec], args, "oracle", _disclosure(spec))
    return EXIT_OK


def _bench(args) -> int:
    spec = _spec(args)
    report = timing_benchmark(args.horizons, args.repeats, args.oracle_max_horizon,
                              spec.seed, spec)
    _emit(report, args, "bench")
    return EXIT_OK


def _noise(args) -> int:
    spec = _spec(args)
    rows = noise_study(spec, args.levels, args.seeds)
    _emit(rows, args, "noise", _disclosure(spec))
    return EXIT_OK


_COMMANDS = {"run": _run, "sweep": _sweep, "validate": _validate, "oracle": _oracle,
             "bench": _bench, "noise": _noise}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.parallel < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return _COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, TraceError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
