"""Stopping-problem description: domain, horizon, coefficients, payoff, grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .fields import CoefficientField

COEFFS = ("mu", "sigma", "flow", "discount")
DEFAULT_PERPETUAL_WINDOW = 10.0


class ProblemError(ValueError):
    """Invariant violation; names the failing field and a witness point."""

    def __init__(self, fieldname: str, message: str, witness: tuple | None = None):
        self.field = fieldname
        self.witness = witness
        where = "" if witness is None else f" at (t={witness[0]:.6g}, x={witness[1]:.6g})"
        super().__init__(f"{fieldname}: {message}{where}")


@dataclass(frozen=True)
class StoppingPayoff:
    branch_a: CoefficientField
    branch_b: CoefficientField
    x_c: float | None = None

    def __call__(self, t, x):
        return np.maximum(self.branch_a(t, x), self.branch_b(t, x))

    @property
    def time_invariant(self) -> bool:
        return self.branch_a.time_invariant and self.branch_b.time_invariant

    def active(self, t, x):
        """True where branch_a is the active branch (ties go to a)."""
        return np.asarray(self.branch_a(t, x) >= self.branch_b(t, x))

    def partials(self, t, x):
        """(g_t, g_x, g_xx) of the active branch."""
        pa = self.branch_a.partials(t, x)
        pb = self.branch_b.partials(t, x)
        use_a = self.active(t, x)
        return tuple(np.where(use_a, a, b) for a, b in zip(pa, pb))


@dataclass(frozen=True)
class Action:
    name: str
    mu: CoefficientField
    sigma: CoefficientField
    flow: CoefficientField
    discount: CoefficientField

    def coeff(self, name: str) -> CoefficientField:
        return getattr(self, name)


@dataclass(frozen=True)
class GridSpec:
    nt: int = 200
    nx: int = 401
    spacing: str = "uniform"  # uniform | log | custom
    x_min: float | None = None
    x_max: float | None = None
    t_window: float | None = None
    margin: float | None = None
    x0: float | None = None
    nodes: tuple | None = None  # custom spacing

    def to_config(self) -> dict:
        out: dict[str, Any] = {"nt": self.nt, "nx": self.nx, "spacing": self.spacing}
        for key in ("x_min", "x_max", "t_window", "margin", "x0"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.nodes is not None:
            out["nodes"] = list(self.nodes)
        return out


@dataclass(frozen=True)
class StoppingProblem:
    domain: tuple[float, float]
    horizon: float | None  # None means perpetual
    mu: CoefficientField
    sigma: CoefficientField
    flow: CoefficientField
    discount: CoefficientField
    payoff: StoppingPayoff
    actions: tuple[Action, ...] = ()
    grid: GridSpec = field(default_factory=GridSpec)
    name: str = ""
    # Dirichlet values at the outermost grid nodes; None means v = g there
    closure: tuple[CoefficientField | None, CoefficientField | None] = (None, None)
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def perpetual(self) -> bool:
        return self.horizon is None

    @property
    def x_c(self) -> float:
        if self.payoff.x_c is not None:
            return float(self.payoff.x_c)
        return locate_kink(self)

    def coeff(self, name: str) -> CoefficientField:
        return getattr(self, name)

    @property
    def coefficients_time_invariant(self) -> bool:
        fields = [self.coeff(c) for c in COEFFS]
        for a in self.actions:
            fields += [a.coeff(c) for c in COEFFS]
        return all(f.time_invariant for f in fields)

    @property
    def time_invariant(self) -> bool:
        return self.coefficients_time_invariant and self.payoff.time_invariant

    @property
    def window(self) -> float:
        """Length of the computational time interval."""
        if self.horizon is not None:
            return float(self.horizon)
        return float(self.grid.t_window or DEFAULT_PERPETUAL_WINDOW)

    def with_fields(self, **kw) -> "StoppingProblem":
        conv = {}
        for k, v in kw.items():
            conv[k] = CoefficientField.coerce(v) if k in COEFFS else v
        return replace(self, **conv)

    def g(self, t, x):
        return self.payoff(t, x)

    def edge_values(self, t, x_lo: float, x_hi: float) -> tuple[float, float]:
        out = []
        for fld, x in zip(self.closure, (x_lo, x_hi)):
            src = fld if fld is not None else self.payoff
            out.append(float(src(t, x)))
        return out[0], out[1]


def locate_kink(problem: StoppingProblem, t: float = 0.0) -> float:
    """Crossing of the payoff branches, by bisection on branch_a - branch_b."""
    lo, hi = problem.domain
    if not np.isfinite(lo) or not np.isfinite(hi):
        lo = problem.grid.x_min if problem.grid.x_min is not None else lo
        hi = problem.grid.x_max if problem.grid.x_max is not None else hi
    span = hi - lo
    xs = np.linspace(lo + 1e-6 * span, hi - 1e-6 * span, 2001)
    d = problem.payoff.branch_a(t, xs) - problem.payoff.branch_b(t, xs)
    s = np.sign(d)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if len(idx) == 0:
        zero = np.nonzero(s == 0)[0]
        if len(zero):
            return float(xs[zero[0]])
        return float(0.5 * (lo + hi))

    def diff(x):
        return float(problem.payoff.branch_a(t, x) - problem.payoff.branch_b(t, x))
    i = idx[0]
    return float(brentq(diff, xs[i], xs[i + 1], xtol=1e-10 * span))


# -- grids ---------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    t_nodes: np.ndarray
    x_nodes: np.ndarray
    spacing: str = "uniform"
    ic: int = 0  # index of the kink node

    def __post_init__(self):
        for a in (self.t_nodes, self.x_nodes):
            a.setflags(write=False)
        if len(self.x_nodes) < 3 or len(self.t_nodes) < 1:
            raise ValueError("grid needs at least 3 x-nodes")
        if np.any(np.diff(self.x_nodes) <= 0) or np.any(np.diff(self.t_nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def nt(self) -> int:
        return len(self.t_nodes) - 1

    @property
    def nx(self) -> int:
        return len(self.x_nodes)

    @property
    def dx(self) -> np.ndarray:
        return np.diff(self.x_nodes)

    @property
    def dt(self) -> float:
        if len(self.t_nodes) < 2:
            return 0.0
        return float(self.t_nodes[1] - self.t_nodes[0])

    def cell(self, x: float) -> float:
        """Local cell width near ``x``."""
        i = int(np.clip(np.searchsorted(self.x_nodes, x), 1, self.nx - 1))
        return float(self.x_nodes[i] - self.x_nodes[i - 1])


def _split_nodes(a: float, c: float, b: float, n: int) -> np.ndarray:
    """n nodes on [a, b], near-uniform, containing c exactly; symmetric if c is central."""
    if not a < c < b:
        u = np.linspace(a, b, n)
        return u
    m = n - 1
    k = int(round((c - a) / (b - a) * m))
    k = min(max(k, 1), m - 1)
    left = np.linspace(a, c, k + 1)
    right = np.linspace(c, b, m - k + 1)
    return np.concatenate([left, right[1:]])


def truncation_bounds(problem: StoppingProblem, x0: float | None = None) -> tuple[float, float]:
    """Quantile-style state truncation for unbounded domains."""
    lo, hi = problem.domain
    gs = problem.grid
    x_min = gs.x_min
    x_max = gs.x_max
    if x_min is not None and x_max is not None:
        return float(x_min), float(x_max)
    center = x0 if x0 is not None else (gs.x0 if gs.x0 is not None else problem.x_c)
    T = problem.window
    tt = np.linspace(0.0, T, 11)
    if lo == 0.0 and not np.isfinite(hi):
        sig = float(np.max(problem.sigma(tt, center))) / max(center, 1e-12)
        half = 6.0 * sig * math.sqrt(T)
        cands = (center * math.exp(-half), center * math.exp(half))
    else:
        sig = float(np.max(problem.sigma(tt, center)))
        half = 6.0 * sig * math.sqrt(T)
        cands = (center - half, center + half)
    a = x_min if x_min is not None else max(cands[0], lo) if np.isfinite(lo) else cands[0]
    b = x_max if x_max is not None else min(cands[1], hi) if np.isfinite(hi) else cands[1]
    return float(a), float(b)


def make_grid(problem: StoppingProblem, nt: int | None = None, nx: int | None = None,
              spacing: str | None = None, x_min: float | None = None,
              x_max: float | None = None) -> Grid:
    gs = problem.grid
    nt = int(nt or gs.nt)
    nx = int(nx or gs.nx)
    spacing = spacing or gs.spacing
    lo, hi = problem.domain
    if spacing == "custom":
        xs = np.asarray(gs.nodes, dtype=float)
        xc = problem.x_c
        ic = int(np.argmin(np.abs(xs - xc)))
    else:
        if x_min is None or x_max is None:
            if np.isfinite(lo) and np.isfinite(hi):
                m = gs.margin if gs.margin is not None else 1e-4 * (hi - lo)
                a = gs.x_min if gs.x_min is not None else lo + m
                b = gs.x_max if gs.x_max is not None else hi - m
            else:
                a, b = truncation_bounds(problem)
            x_min = a if x_min is None else x_min
            x_max = b if x_max is None else x_max
        if not (lo <= x_min < x_max <= hi):
            raise ValueError(f"grid bounds [{x_min}, {x_max}] outside domain {problem.domain}")
        xc = problem.x_c
        if spacing == "log":
            if x_min <= 0:
                raise ValueError("log spacing needs a positive lower bound")
            xs = np.exp(_split_nodes(math.log(x_min), math.log(xc), math.log(x_max), nx)) \
                if x_min < xc < x_max else np.geomspace(x_min, x_max, nx)
            if x_min < xc < x_max:
                xs[np.argmin(np.abs(xs - xc))] = xc
        elif spacing == "uniform":
            xs = _split_nodes(x_min, xc, x_max, nx)
            if abs((x_min + x_max) - 2 * xc) <= 1e-12 * (x_max - x_min):
                # mirror-exact nodes for symmetric set-ups
                u = (xs - x_min) / (x_max - x_min)
                u = 0.5 * (u + (1.0 - u[::-1]))
                xs = x_min + (x_max - x_min) * u
                xs[np.argmin(np.abs(xs - xc))] = xc
        else:
            raise ValueError(f"unknown spacing '{spacing}'")
        ic = int(np.argmin(np.abs(xs - xc)))
    if nt < 1:
        raise ValueError("grid needs at least 2 t-nodes")
    T = problem.window
    ts = np.linspace(0.0, T, nt + 1)
    return Grid(ts, np.asarray(xs, dtype=float), spacing, ic)


# -- validation ------------------------------------------------------------------

def _probe_points(problem: StoppingProblem, n: int = 21):
    lo, hi = problem.domain
    if np.isfinite(lo) and np.isfinite(hi):
        a, b = lo, hi
        xs = a + (b - a) * np.linspace(0.01, 0.99, n)
    else:
        a, b = truncation_bounds(problem)
        xs = np.linspace(a, b, n) if problem.grid.spacing != "log" else np.geomspace(a, b, n)
    ts = np.linspace(0.0, problem.window, n)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    return T, X


def _check_finite(name, f, T, X):
    try:
        v = np.asarray(f(T, X), dtype=float) * np.ones_like(T)
    except ArithmeticError as exc:
        raise ProblemError(name, str(exc)) from None
    bad = ~np.isfinite(v)
    if np.any(bad):
        i = np.argwhere(bad)[0]
        raise ProblemError(name, "non-finite value", (T[tuple(i)], X[tuple(i)]))
    return v


def validate(problem: StoppingProblem) -> StoppingProblem:
    lo, hi = problem.domain
    if not lo < hi:
        raise ProblemError("domain", f"lower bound {lo} must be below upper bound {hi}")
    if problem.horizon is not None and not problem.horizon > 0:
        raise ProblemError("horizon", f"T must be positive, got {problem.horizon}")
    T, X = _probe_points(problem)
    sets = [("", problem)] + [(f"actions[{a.name}].", a) for a in problem.actions]
    for prefix, src in sets:
        for name in COEFFS:
            v = _check_finite(prefix + name, src.coeff(name), T, X)
            if name == "sigma" and np.any(v <= 0):
                i = np.argwhere(v <= 0)[0]
                raise ProblemError(prefix + "sigma", "must be strictly positive",
                                   (T[tuple(i)], X[tuple(i)]))
            if name == "discount" and np.any(v < 0):
                i = np.argwhere(v < 0)[0]
                raise ProblemError(prefix + "discount", "must be nonnegative",
                                   (T[tuple(i)], X[tuple(i)]))
    ga = _check_finite("payoff.branch_a", problem.payoff.branch_a, T, X)
    gb = _check_finite("payoff.branch_b", problem.payoff.branch_b, T, X)
    if problem.payoff.time_invariant:
        xs = X[0]
        d = np.sign(ga[0] - gb[0])
        d = d[d != 0]
        if np.count_nonzero(d[1:] != d[:-1]) > 1:
            raise ProblemError("payoff", "branch_a - branch_b changes sign more than once")
    if problem.perpetual:
        r = _check_finite("discount", problem.discount, T, X)
        if not np.min(r) > 0:
            f_late = _check_finite("flow", problem.flow, T[-5:], X[-5:])
            if not np.max(f_late) < 0:
                raise ProblemError("discount", "perpetual problem needs inf r > 0 or a flow "
                                   "bounded below zero eventually")
    return problem
