"""Config documents: canonical JSON and a TOML rendering of the same tree.

Layout::

    name = "put"
    horizon = "perpetual"          # or a positive number T
    [domain]      lower, upper     # null / omitted for an infinite end
    [coefficients] mu, sigma, flow, discount
    [payoff]      branch_a, branch_b, x_c (optional)
    [[actions]]   name plus any subset of mu, sigma, flow, discount
    [closure]     lower, upper     # optional edge values (default: v = g)
    [grid]        nt, nx, spacing, x_min, x_max, t_window, margin, x0
    [model]       name, params     # expands through the catalog instead
    [meta]        free-form tags (model family, parameters) read by diagnostics

A coefficient is a number, an expression string, ``{table = {t, x, values}}``
for an inline table, or ``{table_file = "path.csv"}``.  Table files hold a
header row ``t\\x,x_1,...,x_m`` followed by rows ``t_i,v_i1,...,v_im``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .expr import ExpressionSyntaxError
from .fields import CoefficientField
from .problem import (COEFFS, Action, GridSpec, ProblemError, StoppingPayoff,
                      StoppingProblem, validate)


class ConfigError(ValueError):
    pass


def _load_table_file(path: Path) -> CoefficientField:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    xs = [float(v) for v in rows[0][1:]]
    ts = [float(r[0]) for r in rows[1:]]
    vals = [[float(v) for v in r[1:]] for r in rows[1:]]
    return CoefficientField.tabulated(ts, xs, vals)


def write_table_file(path: Path, fld: CoefficientField) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t\\x"] + [repr(float(v)) for v in fld.x_nodes])
        for t, row in zip(fld.t_nodes, fld.table):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _field(name: str, obj: Any, base_dir: Path | None) -> CoefficientField:
    try:
        if isinstance(obj, dict) and "table_file" in obj:
            p = Path(obj["table_file"])
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            return _load_table_file(p)
        return CoefficientField.coerce(obj)
    except ExpressionSyntaxError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _bound(v) -> float:
    if v is None:
        return math.nan
    if isinstance(v, str):
        return float(v)  # accepts "inf" / "-inf"
    return float(v)


def from_dict(doc: dict, base_dir: Path | None = None, check: bool = True) -> StoppingProblem:
    if "model" in doc:
        from . import catalog
        model = doc["model"]
        try:
            prob = catalog.build(model["name"], **model.get("params", {}))
        except (KeyError, TypeError, catalog.CatalogError) as exc:
            raise ConfigError(f"[model]: {exc}") from None
        if "grid" in doc:
            prob = replace(prob, grid=_grid(doc["grid"]))
        return prob
    for key in ("domain", "horizon", "coefficients", "payoff"):
        if key not in doc:
            raise ConfigError(f"missing section '{key}'")
    dom = doc["domain"]
    lo = _bound(dom.get("lower"))
    hi = _bound(dom.get("upper"))
    lo = -math.inf if math.isnan(lo) else lo
    hi = math.inf if math.isnan(hi) else hi
    hz = doc["horizon"]
    if hz == "perpetual":
        horizon = None
    else:
        try:
            horizon = float(hz)
        except (TypeError, ValueError):
            raise ConfigError(f"horizon must be 'perpetual' or a number, got {hz!r}") from None
    co = doc["coefficients"]
    missing = [c for c in COEFFS if c not in co]
    if missing:
        raise ConfigError(f"coefficients: missing {', '.join(missing)}")
    fields = {c: _field(f"coefficients.{c}", co[c], base_dir) for c in COEFFS}
    pay = doc["payoff"]
    payoff = StoppingPayoff(_field("payoff.branch_a", pay["branch_a"], base_dir),
                            _field("payoff.branch_b", pay["branch_b"], base_dir),
                            None if pay.get("x_c") is None else float(pay["x_c"]))
    actions = []
    for i, act in enumerate(doc.get("actions", [])):
        name = str(act.get("name", f"a{i}"))
        over = {c: (_field(f"actions[{name}].{c}", act[c], base_dir) if c in act else fields[c])
                for c in COEFFS}
        actions.append(Action(name, **over))
    grid = _grid(doc.get("grid", {}))
    clo = doc.get("closure", {})
    closure = tuple(None if clo.get(side) is None else _field(f"closure.{side}", clo[side], base_dir)
                    for side in ("lower", "upper"))
    prob = StoppingProblem((lo, hi), horizon, payoff=payoff, actions=tuple(actions), grid=grid,
                           closure=closure,
                           name=str(doc.get("name", "")), meta=dict(doc.get("meta", {})), **fields)
    return validate(prob) if check else prob


def _grid(g: dict) -> GridSpec:
    kw = {}
    for key in ("nt", "nx"):
        if key in g:
            kw[key] = int(g[key])
    if "spacing" in g:
        kw["spacing"] = str(g["spacing"])
    for key in ("x_min", "x_max", "t_window", "margin", "x0"):
        if g.get(key) is not None:
            kw[key] = float(g[key])
    if "nodes" in g:
        kw["nodes"] = tuple(float(v) for v in g["nodes"])
    return GridSpec(**kw)


def to_dict(problem: StoppingProblem) -> dict:
    lo, hi = problem.domain
    doc: dict[str, Any] = {}
    if problem.name:
        doc["name"] = problem.name
    doc["domain"] = {}
    if math.isfinite(lo):
        doc["domain"]["lower"] = lo
    if math.isfinite(hi):
        doc["domain"]["upper"] = hi
    doc["horizon"] = "perpetual" if problem.horizon is None else problem.horizon
    doc["coefficients"] = {c: problem.coeff(c).to_config() for c in COEFFS}
    pay = {"branch_a": problem.payoff.branch_a.to_config(),
           "branch_b": problem.payoff.branch_b.to_config()}
    if problem.payoff.x_c is not None:
        pay["x_c"] = problem.payoff.x_c
    doc["payoff"] = pay
    if problem.actions:
        doc["actions"] = [{"name": a.name, **{c: a.coeff(c).to_config() for c in COEFFS}}
                          for a in problem.actions]
    if problem.closure != (None, None):
        doc["closure"] = {side: fld.to_config()
                          for side, fld in zip(("lower", "upper"), problem.closure) if fld is not None}
    doc["grid"] = problem.grid.to_config()
    meta = {k: v for k, v in problem.meta.items() if _jsonable(v)}
    if meta:
        doc["meta"] = meta
    return doc


def _jsonable(v) -> bool:
    try:
        json.dumps(v, allow_nan=False)
        return True
    except (TypeError, ValueError):
        return False


def parse_problem(text: str, fmt: str | None = None, base_dir: Path | None = None,
                  check: bool = True) -> StoppingProblem:
    """Parse a config document (JSON or TOML; sniffed when ``fmt`` is None)."""
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "toml"
    try:
        doc = json.loads(text) if fmt == "json" else tomli.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    try:
        return from_dict(doc, base_dir, check)
    except ProblemError as exc:
        raise ConfigError(f"invariant violation in {exc}") from None


def print_problem(problem: StoppingProblem, fmt: str = "json") -> str:
    doc = to_dict(problem)
    if fmt == "json":
        return json.dumps(doc, indent=2) + "\n"
    return tomli_w.dumps(doc)


def load_problem(path: str | Path, check: bool = True) -> StoppingProblem:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    fmt = "json" if path.suffix == ".json" else ("toml" if path.suffix == ".toml" else None)
    return parse_problem(text, fmt, path.parent, check)
