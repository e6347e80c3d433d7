"""Structural checks on problems and solved surfaces.

Single crossing (SC/SSC), monotone-environment classification from V_t and the
IOV/DOV integrand, boundary monotonicity with a windowed strictness proxy,
comparative statics between problem pairs, the V - g reduction for payoff
changes, and the sign table for arithmetic/geometric Brownian problems.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .fields import CoefficientField, KinkError
from .problem import COEFFS, Grid, StoppingPayoff, StoppingProblem, locate_kink, make_grid
from .solver import (CONTINUE, STOP, FreeBoundary, SolverSettings, ValueSurface,
                     extract_boundaries, solve)

REPORT_VERSION = 1
CLASSES = ("IncreasingStrict", "Increasing", "Flat", "Decreasing", "DecreasingStrict", "Mixed")


class DiagnosticsError(ValueError):
    pass


def _bcast(v, shape):
    return np.broadcast_to(np.asarray(v, dtype=float), shape)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- single crossing ---------------------------------------------------------------

@dataclass
class SCProfile:
    t_nodes: np.ndarray
    x_nodes: np.ndarray
    h: np.ndarray            # (n_t, n_x); NaN at edges and kink nodes
    verdict_sc: bool
    verdict_ssc: bool
    x_minus: np.ndarray      # NaN where SSC fails on that layer
    x_plus: np.ndarray
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable({"kind": "SCProfile", "version": REPORT_VERSION,
                          "verdict_sc": self.verdict_sc, "verdict_ssc": self.verdict_ssc,
                          "t": self.t_nodes, "x_minus": self.x_minus, "x_plus": self.x_plus,
                          "failures": self.failures[:50]})


def gain_rate(problem: StoppingProblem, t, x):
    """h = f + (d/dt + L - r) g on the active payoff branch."""
    gt, gx, gxx = problem.payoff.partials(t, x)
    shape = np.broadcast(np.asarray(t), np.asarray(x)).shape
    f = _bcast(problem.flow(t, x), shape)
    mu = _bcast(problem.mu(t, x), shape)
    sig = _bcast(problem.sigma(t, x), shape)
    r = _bcast(problem.discount(t, x), shape)
    return f + gt + mu * gx + 0.5 * sig ** 2 * gxx - r * _bcast(problem.g(t, x), shape)


def _kink_at(problem: StoppingProblem, t: float) -> float:
    if problem.payoff.time_invariant:
        return problem.x_c
    try:
        return locate_kink(problem, t)
    except Exception:
        return problem.x_c


def _sign_pattern(h, ztol, rising: bool):
    """Index where h switches sign in the SSC pattern, or None if violated.

    rising: (-)* (0)? (+)*; returns the first index with h >= -ztol (len(h) if none).
    falling: (+)* (0)? (-)*; returns the first index with h <= ztol.
    """
    s = np.where(h > ztol, 1, np.where(h < -ztol, -1, 0))
    if not rising:
        s = -s
    m = int(np.argmax(s >= 0)) if np.any(s >= 0) else len(s)
    if m < len(s) and np.any(s[m + 1:] != 1):
        return None
    return m


def check_single_crossing(problem: StoppingProblem, grid: Grid | None = None,
                          tol: float = 1e-9) -> SCProfile:
    grid = grid or make_grid(problem)
    x = grid.x_nodes
    ts = grid.t_nodes if (problem.perpetual or grid.nt == 1) else grid.t_nodes[:-1]
    H = np.full((len(ts), len(x)), np.nan)
    xm = np.full(len(ts), np.nan)
    xp = np.full(len(ts), np.nan)
    sc = ssc = True
    fails = []
    for k, t in enumerate(ts):
        xc = _kink_at(problem, float(t))
        inner = np.arange(1, len(x) - 1)
        inner = inner[np.abs(x[inner] - xc) > 1e-12 * max(1.0, abs(xc))]
        h = np.asarray(gain_rate(problem, float(t), x[inner]), dtype=float)
        H[k, inner] = h
        ztol = tol * max(1.0, float(np.max(np.abs(h))) if h.size else 1.0)
        left, right = x[inner] < xc, x[inner] > xc
        hl, hr = h[left], h[right]
        if np.any(np.diff(hl) < -ztol):
            sc = False
            i = int(np.argmin(np.diff(hl)))
            fails.append({"t": float(t), "side": "left", "kind": "SC", "x": float(x[inner][left][i])})
        if np.any(np.diff(hr) > ztol):
            sc = False
            i = int(np.argmax(np.diff(hr)))
            fails.append({"t": float(t), "side": "right", "kind": "SC", "x": float(x[inner][right][i])})
        hfun = lambda z, t=float(t): float(gain_rate(problem, t, z))
        ml = _sign_pattern(hl, ztol, rising=True)
        mr = _sign_pattern(hr, ztol, rising=False)
        if ml is None or mr is None:
            ssc = False
            fails.append({"t": float(t), "kind": "SSC", "side": "left" if ml is None else "right"})
            continue
        xl, xr = x[inner][left], x[inner][right]
        xm[k] = _crossing(hfun, xl, hl, ml, xc, float(x[0]), ztol)
        xp[k] = _crossing(hfun, xr, hr, mr, float(x[-1]), xc, ztol)
    return SCProfile(np.asarray(ts, dtype=float), x.copy(), H, sc, sc and ssc, xm, xp, fails)


def _crossing(hfun, xs, hs, m, x_if_none, x_if_first, ztol):
    if m >= len(xs):
        return x_if_none
    if m == 0:
        return x_if_first
    a, b = xs[m - 1], xs[m]
    if abs(hs[m]) <= ztol:
        return float(b)
    try:
        return float(brentq(hfun, a, b, xtol=1e-14))
    except ValueError:
        return float(0.5 * (a + b))


# -- monotone environments ---------------------------------------------------------

@dataclass
class MonotoneVerdict:
    classification: str
    vt_min: float
    vt_max: float
    iov_min: float           # min of the integrand over CONTINUE nodes
    dov_max: float           # max of the integrand over CONTINUE nodes
    witnesses: dict = field(default_factory=dict)
    explanation: str = ""
    skipped: int = 0         # kink nodes left out of the integrand
    n_nodes: int = 0
    tol_vt: float = 0.0
    tol_integrand: float = 0.0

    @property
    def direction(self) -> str:
        if self.classification.startswith("Increasing"):
            return "increasing"
        if self.classification.startswith("Decreasing"):
            return "decreasing"
        return self.classification.lower()

    @property
    def strict(self) -> bool:
        return self.classification.endswith("Strict")

    def to_dict(self) -> dict:
        return _jsonable({"kind": "MonotoneVerdict", "version": REPORT_VERSION,
                          "classification": self.classification, "vt_min": self.vt_min,
                          "vt_max": self.vt_max, "iov_min": self.iov_min, "dov_max": self.dov_max,
                          "witnesses": self.witnesses, "explanation": self.explanation,
                          "skipped": self.skipped, "n_nodes": self.n_nodes})


def time_derivative(surface: ValueSurface, values: np.ndarray | None = None) -> np.ndarray:
    """One-sided differences in t: forward on every layer but the last, backward there."""
    V = surface.values if values is None else values
    if V.shape[0] == 1:
        return np.zeros_like(V)
    ts = surface.t_nodes
    out = np.empty_like(V)
    out[:-1] = (V[1:] - V[:-1]) / np.diff(ts)[:, None]
    out[-1] = out[-2]
    return out


def x_derivatives(V: np.ndarray, x: np.ndarray):
    """Central V_x and V_xx on a nonuniform grid; NaN at the two edges."""
    hm = np.diff(x)[:-1]
    hp = np.diff(x)[1:]
    Vx = np.full_like(V, np.nan)
    Vxx = np.full_like(V, np.nan)
    a, b, c = V[..., :-2], V[..., 1:-1], V[..., 2:]
    Vx[..., 1:-1] = (hm ** 2 * c - hp ** 2 * a + (hp ** 2 - hm ** 2) * b) / (hm * hp * (hm + hp))
    Vxx[..., 1:-1] = 2 * (hm * c - (hm + hp) * b + hp * a) / (hm * hp * (hm + hp))
    return Vx, Vxx


def _coefficient_t_derivatives(src, t, x):
    """(sigma*sigma_t, mu_t, r_t, f_t) for a problem or action on (t, x) arrays."""
    shape = np.broadcast(t, x).shape
    sig = _bcast(src.sigma(t, x), shape)
    return (sig * _bcast(src.sigma.partial("t", t, x), shape),
            _bcast(src.mu.partial("t", t, x), shape),
            _bcast(src.discount.partial("t", t, x), shape),
            _bcast(src.flow.partial("t", t, x), shape))


def _integrand(src, T, X, V, Vx, Vxx):
    ss, mt, rt, ft = _coefficient_t_derivatives(src, T, X)
    return ss * Vxx + mt * Vx - rt * V + ft


def _layers(surface: ValueSurface, problem: StoppingProblem) -> np.ndarray:
    """Layers where the monotonicity conditions are tested (terminal payoff layer excluded)."""
    n = surface.values.shape[0]
    if n == 1 or problem.perpetual:
        return np.arange(n)
    return np.arange(n - 1)


def _classify(problem, surface, integrands, tol_vt=None, tol_int=None) -> MonotoneVerdict:
    x = surface.x_nodes
    ts = surface.t_nodes
    scale = surface.scale
    # with a time-dependent payoff the sign test applies to V - g
    W = surface.values if problem.payoff.time_invariant else surface.values - surface.obstacle
    Vt = time_derivative(surface, W)
    layers = _layers(surface, problem)
    cont = surface.region == CONTINUE
    cont[:, 0] = cont[:, -1] = False
    kink = np.zeros(len(x), dtype=bool)
    try:
        kink |= np.abs(x - problem.x_c) <= 1e-12 * max(1.0, abs(problem.x_c))
    except Exception:
        pass
    mask = np.zeros_like(cont)
    mask[layers] = cont[layers]
    skipped = int((mask & kink[None, :]).sum())
    imask = mask & ~kink[None, :]
    span = max(float(ts[-1] - ts[0]), 1.0)
    tol_vt = 1e-7 * scale / span if tol_vt is None else tol_vt
    tol_int = 1e-6 * scale if tol_int is None else tol_int
    vt_all = Vt[layers][:, 1:-1]
    vt_min, vt_max = float(vt_all.min()), float(vt_all.max())
    vals = [I[imask] for I in integrands]
    ivals = np.concatenate(vals) if vals else np.zeros(0)
    iov_min = float(ivals.min()) if ivals.size else 0.0
    dov_max = float(ivals.max()) if ivals.size else 0.0
    wit = {}

    def where(arr, fn):
        sub = np.where(mask, arr, np.nan)
        k, i = np.unravel_index(fn(sub), sub.shape)
        return {"t": float(ts[k]), "x": float(x[i]), "value": float(arr[k, i])}

    counts = np.array([mask[k].sum() for k in layers])
    if np.any((counts > 0) & (counts < 3)):
        return MonotoneVerdict("Mixed", vt_min, vt_max, iov_min, dov_max, wit,
                               "grid too coarse: a layer has fewer than 3 CONTINUE nodes",
                               skipped, int(mask.sum()), tol_vt, tol_int)
    if vt_max <= tol_vt and vt_min >= -tol_vt:
        cls, why = "Flat", "|V_t| within tolerance everywhere"
    elif vt_min >= -tol_vt:
        ok_vt = bool(np.all(Vt[mask] > 0)) if mask.any() else False
        ok_i = all(np.all(I[imask] >= -tol_int) for I in integrands)
        if not ok_vt and mask.any():
            wit["V_t>0"] = where(Vt, np.nanargmin)
        if not ok_i:
            wit["IOV"] = where(np.minimum.reduce(integrands), np.nanargmin)
        cls = "IncreasingStrict" if ok_vt and ok_i else "Increasing"
        why = "V_t >= 0 everywhere" + ("; V_t > 0 and IOV on CONTINUE" if cls.endswith("Strict") else "")
    elif vt_max <= tol_vt:
        ok_vt = bool(np.all(Vt[mask] < 0)) if mask.any() else False
        ok_i = all(np.all(I[imask] <= tol_int) for I in integrands)
        if not ok_vt and mask.any():
            wit["V_t<0"] = where(Vt, np.nanargmax)
        if not ok_i:
            wit["DOV"] = where(np.maximum.reduce(integrands), np.nanargmax)
        cls = "DecreasingStrict" if ok_vt and ok_i else "Decreasing"
        why = "V_t <= 0 everywhere" + ("; V_t < 0 and DOV on CONTINUE" if cls.endswith("Strict") else "")
    else:
        cls, why = "Mixed", "V_t changes sign"
        full = np.zeros_like(mask)
        full[layers, 1:-1] = True
        sub = np.where(full, Vt, np.nan)
        for key, fn in (("V_t_min", np.nanargmin), ("V_t_max", np.nanargmax)):
            k, i = np.unravel_index(fn(sub), sub.shape)
            wit[key] = {"t": float(ts[k]), "x": float(x[i]), "value": float(Vt[k, i])}
    return MonotoneVerdict(cls, vt_min, vt_max, iov_min, dov_max, wit, why, skipped,
                           int(mask.sum()), tol_vt, tol_int)


def classify_environment(problem: StoppingProblem, surface: ValueSurface,
                         tol_vt: float | None = None, tol_integrand: float | None = None) -> MonotoneVerdict:
    """Monotone-environment classification of a solved problem.

    V_t by one-sided differences in t, V_x and V_xx by central differences at
    interior CONTINUE nodes; the integrand is sigma sigma_t V_xx + mu_t V_x
    - r_t V + f_t (the t-derivative of the generator with 1/2 sigma^2).
    """
    x = surface.x_nodes
    T, X = np.meshgrid(surface.t_nodes, x, indexing="ij")
    Vx, Vxx = x_derivatives(surface.values, x)
    I = _integrand(problem, T, X, surface.values, np.nan_to_num(Vx), np.nan_to_num(Vxx))
    return _classify(problem, surface, [I], tol_vt, tol_integrand)


def controlled_monotonicity_check(surface: ValueSurface, problem: StoppingProblem,
                                  tol_vt: float | None = None,
                                  tol_integrand: float | None = None) -> MonotoneVerdict:
    """Controlled variant: the integrand condition must hold for every action."""
    if not problem.actions:
        raise DiagnosticsError("problem has no actions")
    x = surface.x_nodes
    T, X = np.meshgrid(surface.t_nodes, x, indexing="ij")
    Vx, Vxx = x_derivatives(surface.values, x)
    Vx, Vxx = np.nan_to_num(Vx), np.nan_to_num(Vxx)
    ints = [_integrand(a, T, X, surface.values, Vx, Vxx) for a in problem.actions]
    return _classify(problem, surface, ints, tol_vt, tol_integrand)


# -- boundary monotonicity -------------------------------------------------------------

@dataclass
class BoundaryCheck:
    passed: bool
    classification: str
    census: list
    movement: dict           # per side: cumulative movement in cells
    window: int

    def to_dict(self) -> dict:
        return _jsonable({"kind": "BoundaryCheck", "version": REPORT_VERSION, "passed": self.passed,
                          "classification": self.classification, "window": self.window,
                          "movement": self.movement, "census": self.census[:100]})


def _local_cells(boundary: FreeBoundary, idx: np.ndarray) -> np.ndarray:
    x = boundary.x_nodes
    d = np.diff(x)
    out = np.full(len(idx), boundary.cell)
    ok = idx >= 0
    i = np.clip(idx[ok], 1, len(x) - 2)
    out[ok] = np.maximum(d[i - 1], d[i])
    return out


def verify_boundary_monotonicity(boundary: FreeBoundary, verdict: MonotoneVerdict | str,
                                 window: int = 20, slack_cells: float = 1.0,
                                 min_cells: float = 2.0, eps_cells: float = 1e-3) -> BoundaryCheck:
    """Check boundary paths against a classification.

    Weak: no movement against the classified direction beyond ``slack_cells``.
    Strict: cumulative movement of at least ``min_cells`` and, in every window
    of ``window`` steps where the boundary stays interior, movement above
    ``eps_cells`` in the classified direction.
    """
    cls = verdict.classification if isinstance(verdict, MonotoneVerdict) else str(verdict)
    if cls not in CLASSES:
        raise DiagnosticsError(f"unknown classification '{cls}'")
    if cls == "Mixed":
        raise DiagnosticsError("no boundary prediction for a Mixed classification")
    strict = cls.endswith("Strict")
    census = []
    movement = {}
    sides = (("lower", boundary.lower, boundary.lower_index, boundary.lower_raw),
             ("upper", boundary.upper, boundary.upper_index, boundary.upper_raw))
    nx = len(boundary.x_nodes)
    for side, b, idx, raw in sides:
        interior = np.isfinite(b) & ~boundary.empty & (idx >= 0)
        if not interior.any():
            continue
        cells = _local_cells(boundary, idx)
        bi = b[interior]
        ci = cells[interior]
        ti = boundary.t_nodes[interior]
        if cls == "Flat":
            spread = float(bi.max() - bi.min())
            movement[side] = spread / float(ci.max())
            if spread > slack_cells * ci.max():
                census.append({"side": side, "kind": "not_flat", "spread": spread})
            continue
        d = 1.0 if (cls.startswith("Decreasing")) == (side == "lower") else -1.0
        db = d * bi
        run = np.maximum.accumulate(db)
        adverse = run - db
        k = int(np.argmax(adverse / ci))
        if adverse[k] > slack_cells * ci[k]:
            census.append({"side": side, "kind": "adverse", "t": float(ti[k]),
                           "cells": float(adverse[k] / ci[k])})
        total = float(db[-1] - db[0])
        movement[side] = total / float(np.median(ci))
        if strict:
            if total < min_cells * float(np.median(ci)):
                census.append({"side": side, "kind": "cumulative", "cells": movement[side]})
            # windows count only while the STOP node keeps a CONTINUE pair and
            # the edge node away; movement is the running advance of either the
            # cell-clamped or the wider sub-cell estimate, so node locking in one
            # of them does not read as a stall
            inner = interior & (idx >= 2) & (idx <= nx - 3)
            paths = [d * b] + ([d * raw] if raw is not None else [])
            for k0 in range(len(b) - window):
                seg = slice(k0, k0 + window + 1)
                if not inner[seg].all():
                    continue
                step = max(float(np.max(pth[seg]) - pth[k0]) for pth in paths)
                if step <= eps_cells * cells[k0]:
                    census.append({"side": side, "kind": "window", "t0": float(boundary.t_nodes[k0]),
                                   "t1": float(boundary.t_nodes[k0 + window]),
                                   "cells": float(step / cells[k0])})
    if not movement:
        census.append({"kind": "no_interior_boundary"})
    return BoundaryCheck(not census, cls, census, movement, window)


# -- comparative statics ------------------------------------------------------------------

MODES = ("flow_discount", "volatility", "drift", "stopping_payoff")
_SHARED = {"flow_discount": ("mu", "sigma"), "volatility": ("mu", "flow", "discount"),
           "drift": ("sigma", "flow", "discount")}


@dataclass
class ComparisonReport:
    mode: str
    value_dominance: dict    # fraction, worst violation, tolerance
    region_inclusion: dict   # violations beyond the slack, slack in cells
    hypothesis_check: str    # n/a | convex | concave | increasing | decreasing | inapplicable
    direction: str           # "hi>=lo" or "hi<=lo"
    passed: bool
    details: dict = field(default_factory=dict)
    surfaces: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return _jsonable({"kind": "ComparisonReport", "version": REPORT_VERSION, "mode": self.mode,
                          "value_dominance": self.value_dominance,
                          "region_inclusion": self.region_inclusion,
                          "hypothesis_check": self.hypothesis_check, "direction": self.direction,
                          "pass": self.passed, "details": self.details})


def _probe(problem: StoppingProblem, grid: Grid, n_t: int = 11):
    ts = np.linspace(grid.t_nodes[0], grid.t_nodes[-1], n_t) if grid.nt > 1 else grid.t_nodes
    T, X = np.meshgrid(ts, grid.x_nodes, indexing="ij")
    return T, X


def _sample_field(fld, T, X):
    return _bcast(fld(T, X), T.shape).astype(float)


def _same(a, b, T, X, tol=1e-12) -> bool:
    va, vb = _sample_field(a, T, X), _sample_field(b, T, X)
    return bool(np.all(np.abs(va - vb) <= tol * np.maximum(1.0, np.abs(va))))


def _payoff_same(lo, hi, T, X) -> bool:
    ga, gb = _bcast(lo.g(T, X), T.shape), _bcast(hi.g(T, X), T.shape)
    if not np.allclose(ga, gb, rtol=1e-12, atol=1e-12):
        return False
    ea = [lo.edge_values(t, X[0, 0], X[0, -1]) for t in T[:, 0]]
    eb = [hi.edge_values(t, X[0, 0], X[0, -1]) for t in T[:, 0]]
    return bool(np.allclose(ea, eb, rtol=1e-12, atol=1e-12))


def _fields_of(problem):
    if problem.actions:
        return [problem.actions[k] for k in range(len(problem.actions))]
    return [problem]


def is_convex(surface: ValueSurface, tol: float = 1e-7, sign: float = 1.0) -> bool:
    """Discrete convexity (sign=+1) or concavity (sign=-1) of every layer in x."""
    x = surface.x_nodes
    slopes = np.diff(surface.values, axis=1) / np.diff(x)
    return bool(np.all(sign * np.diff(slopes, axis=1) >= -tol * surface.scale))


def is_monotone(surface: ValueSurface, tol: float = 1e-9, sign: float = 1.0) -> bool:
    """V nondecreasing (sign=+1) or nonincreasing (sign=-1) in x on every layer."""
    return bool(np.all(sign * np.diff(surface.values, axis=1) >= -tol * surface.scale))


def _solve_pair(lo, hi, grid, settings):
    stationary = lo.perpetual and hi.perpetual and lo.time_invariant and hi.time_invariant
    return (solve(lo, grid, settings, stationary=stationary),
            solve(hi, grid, settings, stationary=stationary))


def _inclusion(inner: ValueSurface, outer: ValueSurface, slack: int = 1) -> int:
    """CONTINUE nodes of ``inner`` farther than ``slack`` nodes from any CONTINUE node of ``outer``."""
    ci = inner.region == CONTINUE
    co = outer.region == CONTINUE
    dil = co.copy()
    for s in range(1, slack + 1):
        dil[:, s:] |= co[:, :-s]
        dil[:, :-s] |= co[:, s:]
    return int((ci & ~dil).sum())


def compare_problems(lo: StoppingProblem, hi: StoppingProblem, mode: str,
                     grid: Grid | None = None, settings: SolverSettings | None = None,
                     tol: float = 1e-6, surfaces: tuple | None = None) -> ComparisonReport:
    """Comparative statics between two problems ordered in the fields ``mode`` allows.

    flow_discount: f_hi >= f_lo and r_hi <= r_lo; V_hi >= V_lo and C_lo in C_hi.
    volatility / drift: |sigma_hi| >= |sigma_lo| (mu_hi >= mu_lo); the direction
    follows the convexity (monotonicity in x) of a solved V, checked first.
    """
    if mode not in MODES[:3]:
        raise DiagnosticsError(f"unknown mode '{mode}' (use shifted_payoff_compare for payoffs)")
    grid = grid or make_grid(lo)
    T, X = _probe(lo, grid)
    if lo.domain != hi.domain or (lo.horizon != hi.horizon):
        raise DiagnosticsError("problems must share domain and horizon")
    if not _payoff_same(lo, hi, T, X):
        raise DiagnosticsError("problems must share the stopping payoff and edge values")
    fl, fh = _fields_of(lo), _fields_of(hi)
    if len(fl) != len(fh):
        raise DiagnosticsError("action menus must have the same size")
    for a, b in zip(fl, fh):
        for name in _SHARED[mode]:
            if not _same(a.coeff(name), b.coeff(name), T, X):
                raise DiagnosticsError(f"mode {mode}: field '{name}' must be shared")
        if mode == "flow_discount":
            ok = np.all(_sample_field(b.flow, T, X) >= _sample_field(a.flow, T, X) - 1e-15) and \
                np.all(_sample_field(b.discount, T, X) <= _sample_field(a.discount, T, X) + 1e-15)
            if not ok:
                raise DiagnosticsError("ordering violated: need f_hi >= f_lo and r_hi <= r_lo")
        elif mode == "volatility":
            if not np.all(np.abs(_sample_field(b.sigma, T, X)) >= np.abs(_sample_field(a.sigma, T, X)) - 1e-15):
                raise DiagnosticsError("ordering violated: need |sigma_hi| >= |sigma_lo|")
        elif mode == "drift":
            if not np.all(_sample_field(b.mu, T, X) >= _sample_field(a.mu, T, X) - 1e-15):
                raise DiagnosticsError("ordering violated: need mu_hi >= mu_lo")
    s_lo, s_hi = surfaces if surfaces is not None else _solve_pair(lo, hi, grid, settings)
    scale = max(s_lo.scale, s_hi.scale)
    hyp, sign = "n/a", 1.0
    if mode in ("volatility", "drift"):
        test = is_convex if mode == "volatility" else is_monotone
        names = ("convex", "concave") if mode == "volatility" else ("increasing", "decreasing")
        if test(s_lo) or test(s_hi):
            hyp = names[0]
        elif test(s_lo, sign=-1.0) or test(s_hi, sign=-1.0):
            hyp, sign = names[1], -1.0
        else:
            hyp = "inapplicable"
    diff = sign * (s_hi.values - s_lo.values)
    worst = float(max(0.0, -diff.min()))
    frac = float(np.mean(diff >= -tol * scale))
    inner, outer = (s_lo, s_hi) if sign > 0 else (s_hi, s_lo)
    viol = _inclusion(inner, outer)
    b_lo = extract_boundaries(s_lo, lo.x_c)
    b_hi = extract_boundaries(s_hi, hi.x_c)
    details = {"boundary_lo_t0": [b_lo.lower[0], b_lo.upper[0]],
               "boundary_hi_t0": [b_hi.lower[0], b_hi.upper[0]], "scale": scale}
    passed = hyp != "inapplicable" and worst <= tol * scale and viol == 0
    if hyp == "inapplicable":
        details["note"] = "neither solved value has the shape either branch needs"
    return ComparisonReport(mode, {"fraction": frac, "worst": worst, "tol": tol * scale},
                            {"violations": viol, "slack_cells": 1}, hyp,
                            "hi>=lo" if sign > 0 else "hi<=lo", passed, details, (s_lo, s_hi))


# -- V - g reduction --------------------------------------------------------------------

def _payoff_source(problem: StoppingProblem, g) -> str:
    """Smooth expression text for a payoff; a positive part (one branch 0) is
    replaced by its nonzero branch when that is equivalent (perpetual, f >= 0)."""
    if isinstance(g, str):
        fld = CoefficientField.coerce(g)
    elif isinstance(g, (int, float)):
        fld = CoefficientField.constant(float(g))
    elif isinstance(g, CoefficientField):
        fld = g
    elif isinstance(g, StoppingPayoff):
        a, b = g.branch_a, g.branch_b
        if a.kind == "constant" and b.kind == "constant" and a.value == b.value:
            return a.source()
        zero = [br for br in (a, b) if br.kind == "constant" and br.value == 0.0]
        other = [br for br in (a, b) if not (br.kind == "constant" and br.value == 0.0)]
        if len(zero) == 1 and len(other) == 1:
            grid = make_grid(problem)
            T, X = _probe(problem, grid)
            if not problem.perpetual or np.any(_sample_field(problem.flow, T, X) < 0):
                raise KinkError("a positive-part payoff can be smoothed only for perpetual "
                                "problems with f >= 0")
            fld = other[0]
        else:
            raise KinkError("payoff has a kink; the V - g reduction needs a smooth payoff")
    else:
        raise TypeError(f"cannot use {g!r} as a payoff")
    if fld.kind == "expression" and not fld.expr.smooth:
        raise KinkError(f"payoff '{fld.expr.source}' is not smooth")
    if fld.kind == "tabulated":
        raise KinkError("tabulated payoffs are not supported by the reduction")
    return fld.source()


def shifted_problem(problem: StoppingProblem, g) -> StoppingProblem:
    """Zero-payoff problem for U = V - g with flow f + (d/dt + L - r) g.

    Edges pinned to the payoff stay pinned (U = 0); explicit closures are shifted by g.
    """
    if problem.actions:
        raise DiagnosticsError("the reduction is implemented for uncontrolled problems")
    gs = _payoff_source(problem, g)
    gf = CoefficientField.coerce(gs)
    try:
        srcs = [problem.coeff(c).source() for c in COEFFS]
    except ValueError:
        raise DiagnosticsError("the reduction needs expression or constant coefficients") from None
    mu, sig, f, r = srcs
    flow = (f"({f}) + ({gf.derivative_source('t')}) + ({mu})*({gf.derivative_source('x')})"
            f" + 0.5*({sig})^2*({gf.derivative_source('xx')}) - ({r})*({gs})")
    pay = problem.payoff
    # an edge pinned to the payoff stays pinned (U = 0); explicit closures shift by g
    closure = tuple(None if cl is None else CoefficientField.expression(f"({cl.source()}) - ({gs})")
                    for cl in problem.closure)
    zero = CoefficientField.constant(0.0)
    meta = dict(problem.meta, shift_payoff=gs)
    return replace(problem, flow=CoefficientField.expression(flow),
                   payoff=StoppingPayoff(zero, zero, pay.x_c if pay.x_c is not None else problem.x_c),
                   closure=closure, meta=meta)


def shifted_payoff_compare(problem: StoppingProblem, g_alternate, g_reference=None,
                           grid: Grid | None = None, settings: SolverSettings | None = None,
                           tol: float = 1e-6) -> ComparisonReport:
    """Compare stopping payoffs through the V - g reduction: both zero-payoff
    problems are ordered by their transformed flows and compared in flow mode."""
    ref = problem.payoff if g_reference is None else g_reference
    p_ref = shifted_problem(problem, ref)
    p_alt = shifted_problem(problem, g_alternate)
    grid = grid or make_grid(problem)
    T, X = _probe(problem, grid)
    f_ref, f_alt = _sample_field(p_ref.flow, T, X), _sample_field(p_alt.flow, T, X)
    if np.all(f_alt >= f_ref - 1e-15):
        lo, hi, hi_name = p_ref, p_alt, "alternate"
    elif np.all(f_ref >= f_alt - 1e-15):
        lo, hi, hi_name = p_alt, p_ref, "reference"
    else:
        raise DiagnosticsError("transformed flows are not ordered; no comparison applies")
    # the transformed problems may differ in edge values; compare them directly
    s_lo, s_hi = _solve_pair(lo, hi, grid, settings)
    scale = max(s_lo.scale, s_hi.scale)
    diff = s_hi.values - s_lo.values
    worst = float(max(0.0, -diff.min()))
    viol = _inclusion(s_lo, s_hi)
    b_lo = extract_boundaries(s_lo, lo.x_c)
    b_hi = extract_boundaries(s_hi, hi.x_c)
    details = {"hi": hi_name, "boundary_lo_t0": [b_lo.lower[0], b_lo.upper[0]],
               "boundary_hi_t0": [b_hi.lower[0], b_hi.upper[0]], "scale": scale,
               "payoffs": {"reference": _payoff_source(problem, ref),
                           "alternate": _payoff_source(problem, g_alternate)}}
    return ComparisonReport("stopping_payoff",
                            {"fraction": float(np.mean(diff >= -tol * scale)), "worst": worst,
                             "tol": tol * scale},
                            {"violations": viol, "slack_cells": 1}, "n/a", "hi>=lo",
                            worst <= tol * scale and viol == 0, details, (s_lo, s_hi))


# -- sign table for arithmetic / geometric Brownian problems -------------------------------

def _sign(v: np.ndarray, tol: float) -> str:
    if np.all(np.abs(v) <= tol):
        return "0"
    if np.all(v >= -tol):
        return "+"
    if np.all(v <= tol):
        return "-"
    return "mixed"


def bm_form(problem: StoppingProblem, grid: Grid | None = None) -> str:
    """'gBM' (mu, sigma proportional to x), 'aBM' (x-free) or '' (neither); r must be x-free."""
    grid = grid or make_grid(problem)
    T, X = _probe(problem, grid)
    X = np.where(X == 0, 1e-12, X)

    def xfree(v):
        return bool(np.allclose(v, v[:, :1], rtol=1e-10, atol=1e-14))

    mu, sig = _sample_field(problem.mu, T, X), _sample_field(problem.sigma, T, X)
    if not xfree(_sample_field(problem.discount, T, X)):
        return ""
    if xfree(mu / X) and xfree(sig / X):
        return "gBM"
    if xfree(mu) and xfree(sig):
        return "aBM"
    return ""


def corollary2_sign_table(problem: StoppingProblem, grid: Grid | None = None,
                          settings: SolverSettings | None = None, verify: bool = True) -> dict:
    """Signs of f_t, -r_t, mu_t g_x, sigma_t; predicted band direction; solver check.

    Nonnegative signs predict a widening band (IOV side), nonpositive a narrowing
    one (DOV side); mixed signs give no prediction.  A time-dependent payoff is
    first removed by the V - g reduction on its time-dependent branch.  On a
    finite horizon the approach to maturity acts on the DOV side, so only
    narrowing predictions are emitted there.
    """
    grid = grid or make_grid(problem)
    form = bm_form(problem, grid)
    if not form:
        raise DiagnosticsError("problem is not of arithmetic/geometric Brownian form")
    work, note = problem, ""
    if not problem.payoff.time_invariant:
        br = [b for b in (problem.payoff.branch_a, problem.payoff.branch_b) if not b.time_invariant]
        if len(br) != 1:
            raise DiagnosticsError("both payoff branches depend on t; no reduction applied")
        gs = br[0].source()
        work = replace(shifted_problem(replace(problem, closure=(None, None)), gs))
        note = f"V - ({gs}) reduction"
    T, X = _probe(work, grid, n_t=21)
    inner = (slice(None), slice(1, -1))
    T, X = T[inner], X[inner]
    gx = _bcast(work.payoff.partials(T, X)[1], T.shape)
    gxx = _bcast(work.payoff.partials(T, X)[2], T.shape)
    ftx = _bcast(work.flow.partial("t", T, X), T.shape)
    rt = -_bcast(work.discount.partial("t", T, X), T.shape)
    mut = _bcast(work.mu.partial("t", T, X), T.shape) * gx
    st = _bcast(work.sigma.partial("t", T, X), T.shape) * np.sign(_bcast(work.sigma(T, X), T.shape))
    f = _bcast(work.flow(T, X), T.shape)
    fx = np.diff(f, axis=1)
    fxx = np.diff(fx / np.diff(X, axis=1), axis=1)
    g_co = (np.all(gx >= 0) and np.all(fx >= -1e-12)) or (np.all(gx <= 0) and np.all(fx <= 1e-12))
    convex = bool(np.all(gxx >= -1e-12) and np.all(fxx >= -1e-12 * max(1.0, np.abs(f).max())))
    signs = {}
    for key, v in (("f_t", ftx), ("-r_t", rt), ("mu_t*g_x", mut), ("sigma_t", st)):
        signs[key] = _sign(v, 1e-12 * max(1.0, float(np.abs(v).max())))
    vals = set(signs.values())
    if "mixed" in vals or ("+" in vals and "-" in vals):
        prediction = None
    elif "+" in vals:
        prediction = "widening"
    elif "-" in vals:
        prediction = "narrowing"
    else:
        prediction = "flat"
    if not problem.perpetual and prediction is not None:
        prediction = "narrowing" if prediction in ("narrowing", "flat") else None
    out = {"form": form, "signs": signs, "prediction": prediction, "convex": convex,
           "co_monotone": bool(g_co), "note": note}
    if not (convex and g_co):
        out["prediction"] = None
        out["note"] = (note + "; " if note else "") + "f, g not convex and co-monotone"
        return out
    if verify and out["prediction"] is not None:
        surface = solve(problem, grid, settings)
        boundary = extract_boundaries(surface, problem.x_c)
        strict = any(s in ("+", "-") for s in signs.values()) or not problem.perpetual
        cls = {"widening": "Increasing", "narrowing": "Decreasing", "flat": "Flat"}[out["prediction"]]
        if cls != "Flat" and strict:
            cls += "Strict"
        check = verify_boundary_monotonicity(boundary, cls)
        out.update(verified=check.passed, check=check.to_dict(), boundary_t0=[boundary.lower[0], boundary.upper[0]],
                   boundary_end=[boundary.lower[-2 if len(boundary.lower) > 1 else 0],
                                 boundary.upper[-2 if len(boundary.upper) > 1 else 0]])
    return out


# -- deadlines -----------------------------------------------------------------------------

def check_news_direction(problem: StoppingProblem, surface: ValueSurface, tol: float = 1e-9) -> dict:
    """Compare the deadline payoff gamma with the solved V: good news if gamma >= V
    everywhere, bad news if gamma <= V everywhere."""
    dl = problem.meta.get("deadline")
    if not dl:
        raise DiagnosticsError("problem carries no deadline record")
    gamma = CoefficientField.coerce(dl["gamma"])
    T, X = np.meshgrid(surface.t_nodes, surface.x_nodes, indexing="ij")
    d = _bcast(gamma(T, X), T.shape) - surface.values
    d = d[:, 1:-1]
    t = tol * surface.scale
    observed = "good" if np.all(d >= -t) else "bad" if np.all(d <= t) else "mixed"
    return {"declared": dl["news_direction"], "observed": observed,
            "match": observed == dl["news_direction"], "min_gap": float(d.min()), "max_gap": float(d.max())}


# -- MC problems ------------------------------------------------------------------------------

def is_mc_problem(problem: StoppingProblem, grid: Grid | None = None) -> bool:
    """mu = 0, constant discount, f and g convex in x (sampled)."""
    grid = grid or make_grid(problem)
    T, X = _probe(problem, grid)
    for src in _fields_of(problem):
        if np.any(_sample_field(src.mu, T, X) != 0):
            return False
        r = _sample_field(src.discount, T, X)
        if not np.allclose(r, r.flat[0], rtol=0, atol=0):
            return False
        f = _sample_field(src.flow, T, X)
        fs = np.diff(f, axis=1) / np.diff(X, axis=1)
        if np.any(np.diff(fs, axis=1) < -1e-12 * max(1.0, np.abs(f).max())):
            return False
    g = _bcast(problem.g(T, X), T.shape)
    slopes = np.diff(g, axis=1) / np.diff(X, axis=1)
    return bool(np.all(np.diff(slopes, axis=1) >= -1e-12 * max(1.0, np.abs(g).max())))
