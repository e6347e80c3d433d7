"""Command-line entry point: solve, compare, simulate, verify, catalog.

Exit codes: 0 success, 1 failed checks under --strict-exit, 2 usage or config
errors, 3 solver or simulation errors.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import catalog as C
from . import io
from .config import ConfigError, load_problem, print_problem
from .diagnostics import MODES, DiagnosticsError, compare_problems
from .problem import ProblemError, StoppingProblem, make_grid
from .sde import SimulationError, accuracy_profile, simulate_stopped
from .solver import (FreeBoundary, SolverError, SolverSettings, extract_boundaries, smooth_fit_gap,
                     solve)
from .suites import SUITES, Context, run_suite, suite_invariants

DEFAULT_SEED = 20240601
COARSE_NX = 200          # below this, verify scales Monte Carlo path counts down
COARSE_PATHS = 0.05


class UsageError(Exception):
    pass


def tool_version() -> str:
    try:
        return version("stopflow")
    except PackageNotFoundError:
        return "0+unknown"


def max_workers() -> int:
    cap = os.environ.get("STOPFLOW_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"STOPFLOW_THREADS must be an integer, got '{cap}'") from None
    return n


def parse_grid(text: str | None) -> dict:
    if not text:
        return {}
    out = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in ("nx", "nt") or not val:
            raise UsageError(f"bad --grid entry '{part}' (expected nx=..,nt=..)")
        try:
            out[key] = int(val)
        except ValueError:
            raise UsageError(f"bad --grid value '{val}'") from None
        if out[key] < 3:
            raise UsageError(f"--grid {key} must be at least 3")
    return out


def resolve(ref: str, grid: dict) -> StoppingProblem:
    """``catalog:<name>`` or a config file path, with grid overrides applied."""
    if ref.startswith("catalog:"):
        try:
            problem = C.build(ref.split(":", 1)[1])
        except C.CatalogError as exc:
            raise UsageError(str(exc)) from None
    else:
        path = Path(ref)
        if not path.is_file():
            raise UsageError(f"config not found: {ref}")
        try:
            problem = load_problem(path)
        except (ConfigError, ProblemError) as exc:
            raise UsageError(f"{ref}: {exc}") from None
    if grid:
        problem = replace(problem, grid=replace(problem.grid, **grid))
    return problem


def _table(out: Path, fmt: str, name: str, header, columns, manifest: io.RunManifest):
    """Plot-ready table as CSV or as a column-oriented JSON document."""
    if fmt == "json":
        doc = {"columns": list(header), "data": {h: c for h, c in zip(header, columns)}}
        manifest.add(io.write_json(out / f"{name}.json", doc, kind="Table"))
    else:
        rows = zip(*columns)
        manifest.add(io._write_rows(out / f"{name}.csv", header,
                                    [[io._num(v) if isinstance(v, (float, np.floating)) else v
                                      for v in r] for r in rows]))


def _finish(args, manifest: io.RunManifest, out: Path, passed: bool | None) -> int:
    manifest.passed = passed
    manifest.write(out)
    print(f"manifest: {out / 'manifest.json'}")
    return 1 if (args.strict_exit and passed is False) else 0


# -- commands ------------------------------------------------------------------------

def cmd_solve(args) -> int:
    grid = parse_grid(args.grid)
    problem = resolve(args.config, grid)
    out = Path(args.out)
    stationary = False if args.full else None
    m = io.RunManifest("solve", [args.config], problem.grid.to_config(),
                       {"stationary": stationary}, tool_version(), [])
    surface = solve(problem, settings=SolverSettings(), stationary=stationary)
    boundary = extract_boundaries(surface, x_c=problem.x_c)
    fit = smooth_fit_gap(surface, boundary)
    inv = surface.invariant_report()
    if args.format == "json":
        _table(out, "json", "surface", io.SURFACE_HEADER,
               [np.repeat(surface.t_nodes, len(surface.x_nodes)),
                np.tile(surface.x_nodes, len(surface.t_nodes)),
                surface.values.ravel(), surface.region.ravel(), surface.residual.ravel()], m)
        _table(out, "json", "boundary", io.BOUNDARY_HEADER,
               [boundary.t_nodes, boundary.lower, boundary.upper], m)
    else:
        m.add(io.write_surface_csv(out / "surface.csv", surface))
        m.add(io.write_boundary_csv(out / "boundary.csv", boundary))
    m.add(io.write_stpf(out / "surface.stpf", surface))
    report = {"model": problem.name, "invariants": inv, "smooth_fit_max": fit["max"],
              "boundary_valid": boundary.valid, "max_jump": boundary.max_jump, "cell": boundary.cell,
              "b_lower_t0": boundary.lower[0], "b_upper_t0": boundary.upper[0]}
    m.add(io.write_json(out / "solve_report.json", report, kind="SolveReport"))
    passed = bool(inv["obstacle_ok"] and inv["complementarity_ok"] and boundary.valid)
    m.summary = {"passed": passed, "smooth_fit_max": fit["max"]}
    lo, hi = boundary.lower[0], boundary.upper[0]
    print(f"{problem.name or args.config}: b_lower(t0)={lo:.6g} b_upper(t0)={hi:.6g} "
          f"smooth-fit gap={fit['max']:.3g}")
    return _finish(args, m, out, passed)


def cmd_compare(args) -> int:
    grid = parse_grid(args.grid)
    lo, hi = resolve(args.lo, grid), resolve(args.hi, grid)
    out = Path(args.out)
    m = io.RunManifest("compare", [args.lo, args.hi], lo.grid.to_config(), {"mode": args.mode},
                       tool_version(), [])
    try:
        rep = compare_problems(lo, hi, args.mode)
    except DiagnosticsError as exc:
        raise UsageError(str(exc)) from None
    m.add(io.write_json(out / "compare_report.json", rep.to_dict()))
    if args.format == "csv":
        _table(out, "csv", "compare_summary",
               ("mode", "dominance_fraction", "inclusion_violations", "hypothesis_check", "direction",
                "pass"),
               [[rep.mode], [float(rep.value_dominance.get("fraction", np.nan))],
                [int(rep.region_inclusion.get("violations", -1))],
                [rep.hypothesis_check], [rep.direction], [int(rep.passed)]], m)
    m.summary = {"pass": rep.passed, "hypothesis_check": rep.hypothesis_check}
    print(f"compare {args.mode}: {'PASS' if rep.passed else 'FAIL'} "
          f"(hypothesis {rep.hypothesis_check}, direction {rep.direction})")
    return _finish(args, m, out, rep.passed)


def boundary_from_file(path: str, problem: StoppingProblem) -> FreeBoundary:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"boundary file not found: {path}")
    try:
        tab = io.read_boundary_csv(p)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from None
    n = len(tab["t"])
    neg = np.full(n, -1)
    return FreeBoundary(tab["t"], tab["lower"], tab["upper"], float(problem.x_c), True, [], 0.0, 0.0,
                        0.0, neg, neg.copy(), np.zeros(n, dtype=bool), float("nan"))


def cmd_simulate(args) -> int:
    if args.n <= 0:
        raise UsageError("simulate needs --n >= 1")
    if args.dt <= 0:
        raise UsageError("simulate needs --dt > 0")
    grid = parse_grid(args.grid)
    problem = resolve(args.config, grid)
    out = Path(args.out)
    x = make_grid(problem).x_nodes
    if args.boundary:
        boundary = boundary_from_file(args.boundary, problem)
    else:
        boundary = extract_boundaries(solve(problem), x_c=problem.x_c)
    m = io.RunManifest("simulate", [args.config] + ([args.boundary] if args.boundary else []),
                       problem.grid.to_config(), {"n": args.n, "dt_sim": args.dt, "x0": args.x0},
                       tool_version(), [args.seed])
    ens = simulate_stopped(problem, boundary, args.n, args.seed, dt_sim=args.dt, x0=args.x0,
                           x_range=(float(x[0]), float(x[-1])))
    if args.format == "json":
        _table(out, "json", "ensemble", io.ENSEMBLE_HEADER,
               [ens.path_id, ens.tau, ens.x_tau, ens.payoff, ens.alternative, ens.deadline_hit], m)
    else:
        m.add(io.write_ensemble_csv(out / "ensemble.csv", ens))
    mean, se = ens.value()
    summary = {"mean": mean, "se": se, "n": ens.n_paths, "censored": int(ens.censored.sum()),
               "truncated": int(ens.truncated.sum()), "deadline_hits": int(ens.deadline_hit.sum())}
    if problem.meta.get("model") in ("wald", "nonbinary") and args.n >= 30:
        prof = accuracy_profile(ens, boundary)
        if args.format == "json":
            m.add(io.write_json(out / "accuracy_profile.json",
                                {"rows": prof.rows, "trend": prof.trend}, kind="AccuracyProfile"))
        else:
            m.add(io.write_profile_csv(out / "accuracy_profile.csv", prof))
        summary["trend"] = prof.trend
    m.add(io.write_json(out / "simulate_report.json", summary, kind="SimulationReport"))
    m.summary = summary
    print(f"value {mean:.6g} +- {se:.3g} over {ens.n_paths} paths")
    return _finish(args, m, out, None)


def _suite_job(name: str, grid: dict, seed: int, paths: float):
    ctx = Context(grid, seed, paths)
    checks = run_suite(name, ctx)
    return checks, ctx.solves


def cmd_verify(args) -> int:
    grid = parse_grid(args.grid)
    target = args.suite
    if target != "all" and target not in SUITES:
        raise UsageError(f"unknown suite '{target}' (known: all, {', '.join(SUITES)})")
    paths = args.paths
    if paths is None:
        paths = COARSE_PATHS if grid.get("nx", COARSE_NX) < COARSE_NX else 1.0
    if paths <= 0:
        raise UsageError("--paths must be positive")
    out = Path(args.out)
    m = io.RunManifest("verify", [target], grid, {"paths_scale": paths}, tool_version(), [args.seed])
    names = [n for n in SUITES if n != "invariants"] if target == "all" else [target]
    workers = min(max_workers(), len(names))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_suite_job, n, grid, args.seed, paths) for n in names]
            results = [f.result() for f in futs]
    else:
        results = [_suite_job(n, grid, args.seed, paths) for n in names]
    by_suite = {n: checks for n, (checks, _) in zip(names, results)}
    if target == "all":
        records = [r for _, solves in results for r in solves]
        by_suite["invariants"] = suite_invariants(Context(grid, args.seed, paths), records)
    n_pass = n_fail = 0
    for name, checks in by_suite.items():
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {name}.{c.name}")
            n_pass += bool(c.passed)
            n_fail += not c.passed
    report = {"target": target, "seed": args.seed, "grid": grid, "paths_scale": paths,
              "suites": {n: [c.to_dict() for c in cs] for n, cs in by_suite.items()},
              "passed": n_fail == 0, "n_pass": n_pass, "n_fail": n_fail}
    m.add(io.write_json(out / "verify_report.json", report, kind="VerifyReport"))
    if args.format == "csv":
        rows = [(n, c.name, int(bool(c.passed))) for n, cs in by_suite.items() for c in cs]
        _table(out, "csv", "verify_checks", ("suite", "check", "passed"),
               [list(col) for col in zip(*rows)] if rows else [[], [], []], m)
    m.summary = {"n_pass": n_pass, "n_fail": n_fail}
    print(f"{n_pass} passed, {n_fail} failed")
    if n_fail and grid:
        print("warning: --grid overrides model resolutions; thresholds stated at finer grids "
              "may fail from quantization slack", file=sys.stderr)
    return _finish(args, m, out, n_fail == 0)


def cmd_catalog(args) -> int:
    if args.action == "list":
        for n in C.names():
            print(f"{n:24s} {C.describe(n)}")
        return 0
    if not args.name:
        raise UsageError("catalog show needs a model name")
    try:
        problem = C.build(args.name)
    except C.CatalogError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(print_problem(problem, "toml" if args.toml else "json"))
    return 0


# -- parser --------------------------------------------------------------------------

def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--out", default=d("stopflow_out"), help="output directory")
    parser.add_argument("--seed", type=int, default=d(DEFAULT_SEED), help="u64 seed")
    parser.add_argument("--grid", default=d(None), help="grid overrides, e.g. nx=400,nt=200")
    parser.add_argument("--strict-exit", action="store_true", default=d(False),
                        help="exit 1 when any check fails")
    parser.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="table format")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stopflow", description="optimal stopping solver and verification lab")
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one problem")
    s.add_argument("config", help="config file or catalog:<name>")
    s.add_argument("--full", action="store_true", help="full time grid even when stationary")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("compare", parents=[common], help="comparative statics between two problems")
    s.add_argument("lo")
    s.add_argument("hi")
    s.add_argument("--mode", choices=MODES[:3], required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo under a boundary rule")
    s.add_argument("config")
    s.add_argument("--boundary", help="boundary CSV (default: solve the problem)")
    s.add_argument("--n", type=int, default=10_000, help="number of paths")
    s.add_argument("--dt", type=float, default=1e-3, help="simulation step")
    s.add_argument("--x0", type=float, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", parents=[common], help="run verification suites")
    s.add_argument("suite", help="suite name or 'all'")
    s.add_argument("--paths", type=float, default=None, help="scale factor on Monte Carlo path counts")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("catalog", parents=[common], help="list or show catalog models")
    s.add_argument("action", choices=("list", "show"))
    s.add_argument("name", nargs="?")
    s.add_argument("--toml", action="store_true", help="emit TOML instead of JSON")
    s.set_defaults(func=cmd_catalog)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stopflow: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, SimulationError, DiagnosticsError, io.FormatError) as exc:
        print(f"stopflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
