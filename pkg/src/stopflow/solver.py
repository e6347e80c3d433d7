"""Backward theta-scheme for the discrete HJB obstacle problem.

Each time layer solves the LCP

    M v >= q,  v >= g,  (M v - q)(v - g) = 0,   M = I/dt - theta A_n,
    q = v_{n+1}/dt + (1 - theta)(A_{n+1} v_{n+1} + f_{n+1}) + theta f_n,

with A the upwind generator  1/2 sigma^2 D_xx + mu D_x - r  and v = g pinned
at the two outermost nodes.  The per-node residual q - M v is the discrete
``v_t + L v + f``: zero on CONTINUE nodes, nonpositive on STOP nodes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import lcp
from .problem import COEFFS, Grid, StoppingProblem, make_grid

CONTINUE, STOP = 1, 0


class SolverError(RuntimeError):
    def __init__(self, message: str, worst: tuple | None = None):
        self.worst = worst
        if worst is not None:
            message += f" (worst node t={worst[0]:.6g}, x={worst[1]:.6g}, value {worst[2]:.3g})"
        super().__init__(message)


@dataclass(frozen=True)
class SolverSettings:
    tol_pde: float = 1e-9          # relative to scale(g)
    tol_obstacle: float = 1e-9     # relative to scale(g)
    psor_omega: float = 1.5
    max_sweeps: int = 100_000
    theta: float = 1.0
    stationary_tol: float = 1e-9   # relative to scale(g)
    stationary_max_layers: int = 10_000
    stationary_dt: float = 1e4     # pseudo-time step of the continuation
    lcp: str = "howard"            # howard | psor

    def __post_init__(self):
        if not 0 < self.psor_omega < 2:
            raise ValueError("psor_omega must lie in (0, 2)")
        if not 0.5 <= self.theta <= 1:
            raise ValueError("theta must lie in [0.5, 1]")
        for name in ("tol_pde", "tol_obstacle", "stationary_tol", "stationary_dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lcp not in ("howard", "psor"):
            raise ValueError(f"unknown LCP method '{self.lcp}'")


@dataclass
class ValueSurface:
    grid: Grid
    values: np.ndarray      # (n_t, n_x)
    region: np.ndarray      # int8, CONTINUE / STOP
    residual: np.ndarray
    obstacle: np.ndarray    # g on the grid
    scale: float
    settings: SolverSettings = field(default_factory=SolverSettings)
    action: np.ndarray | None = None
    action_names: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def t_nodes(self) -> np.ndarray:
        return self.grid.t_nodes

    @property
    def x_nodes(self) -> np.ndarray:
        return self.grid.x_nodes

    def invariant_report(self) -> dict:
        s = self.settings
        tol_pde = s.tol_pde * self.scale
        tol_obs = s.tol_obstacle * self.scale
        gap = self.values - self.obstacle
        cont = self.region == CONTINUE
        res = self.residual
        out = {
            "min_gap": float(gap.min()),
            "obstacle_ok": bool(gap.min() >= -1e-12 * self.scale),
            "max_residual": float(res.max()),
            "max_abs_residual_continue": float(np.abs(res[cont]).max()) if cont.any() else 0.0,
            # gap*res >= -tol_pde*max(tol_obs, gap): the absolute product bound
            # tol_pde*tol_obs sits below the double-precision floor of the residual
            "min_complementarity": float((gap * res).min()),
            "complementarity_slack": float((gap * res + tol_pde * np.maximum(tol_obs, np.abs(gap))).min()),
        }
        out["complementarity_ok"] = bool(
            out["max_residual"] <= tol_pde
            and out["max_abs_residual_continue"] <= tol_pde
            and out["complementarity_slack"] >= 0
            # pinned edge columns carry closure values, not stopping decisions
            and np.all(gap[:, 1:-1][~cont[:, 1:-1]] <= tol_obs))
        return out


def scale_of(g: np.ndarray, v: np.ndarray | None = None) -> float:
    s = float(np.max(np.abs(g)))
    if s == 0 and v is not None:
        s = float(np.max(np.abs(v)))
    return s if s > 0 else 1.0


def generator(x: np.ndarray, mu, sigma, r):
    """Tridiagonal upwind generator; edge rows are left zero."""
    n = len(x)
    hm = np.empty(n)
    hp = np.empty(n)
    hm[1:] = np.diff(x)
    hp[:-1] = np.diff(x)
    hm[0] = hp[-1] = 1.0
    mu = np.broadcast_to(mu, x.shape)
    a = 0.5 * np.broadcast_to(sigma, x.shape) ** 2
    r = np.broadcast_to(r, x.shape)
    lo = 2 * a / (hm * (hm + hp))
    up = 2 * a / (hp * (hm + hp))
    mp = np.maximum(mu, 0.0)
    mm = np.minimum(mu, 0.0)
    up = up + mp / hp
    lo = lo - mm / hm
    di = -(lo + up) - r
    for arr in (lo, di, up):
        arr[0] = arr[-1] = 0.0
    return lo, di, up


def _coeff_arrays(src, t: float, x: np.ndarray):
    return tuple(np.broadcast_to(np.asarray(src.coeff(c)(t, x), dtype=float), x.shape)
                 for c in COEFFS)


def _fixed_mask(n: int) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    m[0] = m[-1] = True
    return m


def solve_lcp(lo, di, up, q, g, fixed, settings: SolverSettings, stop0=None, v0=None,
              scale: float = 1.0):
    if settings.lcp == "psor":
        res = lcp.psor(lo, di, up, q, g, fixed, v0=v0, omega=settings.psor_omega,
                       tol=1e-3 * settings.tol_pde * scale, max_sweeps=settings.max_sweeps)
    else:
        res = lcp.howard(lo, di, up, q, g, fixed, stop0)
    return res


def _residual(lo, di, up, q, v, fixed):
    r = q - lcp.matvec(lo, di, up, v)
    r[fixed] = 0.0
    return r


def _check_layer(res, resid, v, g, t, x, settings, scale):
    if not res.converged:
        i = int(np.argmax(np.abs(resid)))
        raise SolverError(f"LCP ({settings.lcp}) did not converge", (t, x[i], resid[i]))


def lcp_obstacle(problem, t, x, g):
    """Obstacle for the LCP: g, with the closure values on the pinned edge nodes."""
    if problem.closure == (None, None):
        return g
    gl = g.copy()
    gl[0], gl[-1] = problem.edge_values(t, x[0], x[-1])
    return gl


def classify(v, g, resid, tol_obs, tol_pde):
    """STOP where v sits on the obstacle and the residual strictly prefers
    stopping; the pinned edge nodes are always STOP."""
    stop = (v - g <= tol_obs) & (resid < -tol_pde)
    reg = np.where(stop, STOP, CONTINUE).astype(np.int8)
    reg[..., 0] = reg[..., -1] = STOP
    return reg


def solve_stationary(problem: StoppingProblem, grid: Grid | None = None,
                     settings: SolverSettings | None = None, t_freeze: float | None = None,
                     check: bool = True) -> ValueSurface:
    """Fixed-point continuation in pseudo-time; coefficients frozen at ``t_freeze``."""
    settings = settings or SolverSettings()
    if problem.actions:
        from .control import solve_controlled_stationary
        return solve_controlled_stationary(problem, grid, settings, t_freeze)
    if t_freeze is None:
        if check and not problem.time_invariant:
            raise ValueError("solve_stationary needs time-invariant coefficients and payoff")
        t_freeze = 0.0
    grid = grid or make_grid(problem)
    x = grid.x_nodes
    t0 = time.perf_counter()
    mu, sig, f, r = _coeff_arrays(problem, t_freeze, x)
    g = np.asarray(problem.g(t_freeze, x), dtype=float) * np.ones_like(x)
    fixed = _fixed_mask(len(x))
    gl = lcp_obstacle(problem, t_freeze, x, g)
    scale = scale_of(g, gl)
    lo, di, up = generator(x, mu, sig, r)
    dt = settings.stationary_dt
    M = (-lo, 1.0 / dt - di, -up)
    v = gl.copy()
    stop = None
    for layer in range(1, settings.stationary_max_layers + 1):
        q = v / dt + f
        res = solve_lcp(*M, q, gl, fixed, settings, stop, v, scale)
        if not res.converged:
            resid = _residual(*M, q, res.v, fixed)
            _check_layer(res, resid, res.v, gl, t_freeze, x, settings, scale)
        change = float(np.max(np.abs(res.v - v)))
        v, stop = res.v, res.stop
        if change < settings.stationary_tol * scale:
            break
    else:
        raise SolverError(f"stationary iteration did not settle within "
                          f"{settings.stationary_max_layers} layers (last change {change:.3g}); "
                          "the perpetual problem may be ill-posed")
    # stationary residual: drop the pseudo-time term
    resid = _residual(lo * -1, -di, -up, f, v, fixed)
    sgrid = Grid(np.array([t_freeze]), x.copy(), grid.spacing, grid.ic)
    scale = scale_of(g, v)
    reg = classify(v, g, resid, settings.tol_obstacle * scale, settings.tol_pde * scale)
    info = {"layers": layer, "last_change": change, "wall": time.perf_counter() - t0,
            "kind": "stationary"}
    return ValueSurface(sgrid, v[None, :], reg[None, :], resid[None, :], g[None, :], scale,
                        settings, info=info)


def solve_hjb(problem: StoppingProblem, grid: Grid | None = None,
              settings: SolverSettings | None = None) -> ValueSurface:
    """Backward time stepping over the grid; perpetual problems start from a
    stationary layer with coefficients frozen at the end of the window."""
    if problem.actions:
        raise ValueError("problem has actions; use control.solve_controlled")
    settings = settings or SolverSettings()
    grid = grid or make_grid(problem)
    return _backward(problem, grid, settings, None)


def _backward(problem, grid, settings, policy):
    """Shared backward sweep.  ``policy`` is None (plain) or a controller object
    exposing ``layer(k, t, v_next, ...)`` (see control.py)."""
    t0 = time.perf_counter()
    x = grid.x_nodes
    ts = grid.t_nodes
    nt1, nx = len(ts), len(x)
    theta = settings.theta
    fixed = _fixed_mask(nx)
    T = ts[-1]
    G = np.empty((nt1, nx))
    for k, t in enumerate(ts):
        G[k] = np.asarray(problem.g(t, x), dtype=float) * np.ones(nx)
    scale = scale_of(G, lcp_obstacle(problem, T, x, G[-1]))
    V = np.empty((nt1, nx))
    R = np.zeros((nt1, nx))
    A = np.zeros((nt1, nx), dtype=np.int16) if policy is not None else None
    info = {"kind": "backward", "lcp_iterations": 0}
    if problem.perpetual:
        if policy is None:
            term = solve_stationary(problem, grid, settings, t_freeze=T, check=False)
        else:
            term = policy.stationary(T)
        V[-1] = term.values[0]
        R[-1] = term.residual[0]
        if A is not None:
            A[-1] = term.action[0]
        info["terminal"] = "stationary"
    else:
        V[-1] = lcp_obstacle(problem, T, x, G[-1])
        if A is not None:
            A[-1] = 0
        info["terminal"] = "payoff"
    stop = None
    if policy is None:
        nxt = _plain_layer_ops(problem, ts[-1], x)
    for k in range(nt1 - 2, -1, -1):
        dt = ts[k + 1] - ts[k]
        if policy is None:
            cur = _plain_layer_ops(problem, ts[k], x)
            lo, di, up, f = cur
            q = V[k + 1] / dt + theta * f
            if theta < 1:
                lo1, di1, up1, f1 = nxt
                q = q + (1 - theta) * (lcp.matvec(lo1, di1, up1, V[k + 1]) + f1)
            M = (-theta * lo, 1.0 / dt - theta * di, -theta * up)
            gl = lcp_obstacle(problem, ts[k], x, G[k])
            res = solve_lcp(*M, q, gl, fixed, settings, stop, V[k + 1], scale)
            resid = _residual(*M, q, res.v, fixed)
            _check_layer(res, resid, res.v, gl, ts[k], x, settings, scale)
            V[k], R[k], stop = res.v, resid, res.stop
            info["lcp_iterations"] += res.iterations
            nxt = cur
        else:
            gl = lcp_obstacle(problem, ts[k], x, G[k])
            V[k], R[k], A[k], its = policy.layer(k, ts[k], dt, V[k + 1], gl, fixed, scale)
            info["lcp_iterations"] += its
    scale = scale_of(G, V)
    region = classify(V, G, R, settings.tol_obstacle * scale, settings.tol_pde * scale)
    if not problem.perpetual:
        region[-1] = STOP
    info["wall"] = time.perf_counter() - t0
    names = tuple(a.name for a in problem.actions) if policy is not None else ()
    return ValueSurface(grid, V, region, R, G, scale, settings, A, names, info)


def _plain_layer_ops(problem, t, x):
    mu, sig, f, r = _coeff_arrays(problem, t, x)
    lo, di, up = generator(x, mu, sig, r)
    return lo, di, up, f


def solve(problem: StoppingProblem, grid: Grid | None = None,
          settings: SolverSettings | None = None, stationary: bool | None = None) -> ValueSurface:
    """Dispatch on the problem: stationary-perpetual (one layer), controlled, or
    backward.  ``stationary=False`` forces the full time grid."""
    if stationary is None:
        stationary = problem.perpetual and problem.time_invariant
    if stationary:
        return solve_stationary(problem, grid, settings)
    if problem.actions:
        from .control import solve_controlled
        return solve_controlled(problem, grid, settings)
    return solve_hjb(problem, grid, settings)


# -- free boundaries -------------------------------------------------------------

@dataclass
class FreeBoundary:
    t_nodes: np.ndarray
    lower: np.ndarray     # NaN = no lower stopping region
    upper: np.ndarray     # NaN = no upper stopping region
    x_c: float
    valid: bool
    hole_layers: list
    max_jump: float
    max_jump_lower: float
    max_jump_upper: float
    lower_index: np.ndarray  # STOP node index, -1 for sentinel
    upper_index: np.ndarray
    empty: np.ndarray        # layers without CONTINUE nodes
    cell: float              # representative cell width near the boundaries
    x_nodes: np.ndarray | None = None
    # sub-cell estimates clamped one cell wider; continuous in t, used for strictness windows
    lower_raw: np.ndarray | None = None
    upper_raw: np.ndarray | None = None

    def snapped(self) -> "FreeBoundary":
        """Copy with boundaries at the STOP nodes themselves (no sub-cell refinement)."""
        x = self.x_nodes
        lo = np.where(self.lower_index >= 0, x[np.maximum(self.lower_index, 0)], np.nan)
        hi = np.where(self.upper_index >= 0, x[np.maximum(self.upper_index, 0)], np.nan)
        lo[self.empty] = hi[self.empty] = self.x_c
        return replace(self, lower=lo, upper=hi, lower_raw=lo, upper_raw=hi, max_jump_lower=_jump(lo), max_jump_upper=_jump(hi),
                       max_jump=max(_jump(lo), _jump(hi)))

    def bracket(self, k: int) -> tuple[float, float]:
        lo = self.lower[k] if np.isfinite(self.lower[k]) else -np.inf
        hi = self.upper[k] if np.isfinite(self.upper[k]) else np.inf
        return lo, hi


def _jump(b: np.ndarray) -> float:
    d = np.abs(np.diff(b))
    d = d[np.isfinite(d)]
    return float(d.max()) if d.size else 0.0


def _refine(x, gap, s, step):
    """Sub-cell boundary between STOP node ``s`` and the continuation side.

    Smooth fit makes V - g vanish quadratically, so sqrt(V - g) is locally
    linear; its interpolant through the first two CONTINUE nodes is extended to
    zero and clamped to the bracketing cell.
    """
    c1, c2 = s + step, s + 2 * step
    if not (0 <= c2 < len(x)) or gap[c2] <= 0 or gap[c1] <= 0:
        return float(x[s]), float(x[s])
    r1, r2 = np.sqrt(gap[c1]), np.sqrt(gap[c2])
    if r2 <= r1:
        return float(x[s]), float(x[s])
    z = x[c1] - r1 * (x[c2] - x[c1]) / (r2 - r1)
    lo, hi = min(x[s], x[c1]), max(x[s], x[c1])
    s0 = min(max(s - step, 0), len(x) - 1)
    wlo, whi = min(x[s0], x[c1]), max(x[s0], x[c1])
    return float(min(max(z, lo), hi)), float(min(max(z, wlo), whi))


def extract_boundaries(surface: ValueSurface, x_c: float | None = None,
                       refine: bool = True) -> FreeBoundary:
    x = surface.x_nodes
    nx = len(x)
    if x_c is None:
        x_c = float(x[surface.grid.ic])
    ntl = surface.values.shape[0]
    lower = np.full(ntl, np.nan)
    upper = np.full(ntl, np.nan)
    li = np.full(ntl, -1)
    ui = np.full(ntl, -1)
    empty = np.zeros(ntl, dtype=bool)
    lraw = np.full(ntl, np.nan)
    uraw = np.full(ntl, np.nan)
    holes = []
    for k in range(ntl):
        cont = surface.region[k] == CONTINUE
        idx = np.nonzero(cont)[0]
        gap = surface.values[k] - surface.obstacle[k]
        if idx.size == 0:
            lower[k] = upper[k] = lraw[k] = uraw[k] = x_c
            empty[k] = True
            continue
        a, b = idx[0], idx[-1]
        if idx.size != b - a + 1:
            holes.append(k)
        if a - 1 > 0:
            li[k] = a - 1
            lower[k], lraw[k] = _refine(x, gap, a - 1, 1) if refine else (x[a - 1], x[a - 1])
        if b + 1 < nx - 1:
            ui[k] = b + 1
            upper[k], uraw[k] = _refine(x, gap, b + 1, -1) if refine else (x[b + 1], x[b + 1])
    jl, ju = _jump(lower), _jump(upper)
    ic = int(np.argmin(np.abs(x - x_c)))
    cell = float(np.max(np.diff(x)[max(ic - 1, 0):ic + 1])) if surface.grid.spacing == "uniform" \
        else float(np.median(np.diff(x)))
    return FreeBoundary(surface.t_nodes.copy(), lower, upper, float(x_c), not holes, holes,
                        max(jl, ju), jl, ju, li, ui, empty, cell, x.copy(), lraw, uraw)


def smooth_fit_gap(surface: ValueSurface, boundary: FreeBoundary, payoff=None) -> dict:
    """Smooth-fit mismatch at each boundary point.

    The one-sided quotient (V(b + h) - g(b)) / h - g_x(b) is taken with h the
    local cell width, V(b + h) read off the surface by quadratic interpolation
    through three CONTINUE nodes.  ``payoff`` supplies g and g_x; without it they
    come from the obstacle samples.  Returns per-layer arrays ``lower`` and
    ``upper`` (NaN where absent) and the overall ``max``.
    """
    x = surface.x_nodes
    ntl = surface.values.shape[0]
    out = {}
    for side, idx, b_arr, step in (("lower", boundary.lower_index, boundary.lower, 1),
                                   ("upper", boundary.upper_index, boundary.upper, -1)):
        gaps = np.full(ntl, np.nan)
        for k in range(ntl):
            s = idx[k]
            if boundary.empty[k]:
                gaps[k] = 0.0
                continue
            if s < 0:
                continue
            nodes = [s + step, s + 2 * step, s + 3 * step]
            if min(nodes) <= 0 or max(nodes) >= len(x) - 1:
                continue
            if np.any(surface.region[k, nodes] != CONTINUE):
                continue
            b = b_arr[k]
            h = abs(x[s + step] - x[s])
            xe = b + step * h
            xs = x[nodes]
            vs = surface.values[k, nodes]
            ve = sum(vs[i] * np.prod([(xe - xs[j]) / (xs[i] - xs[j]) for j in range(3) if j != i])
                     for i in range(3))
            if payoff is not None:
                t = surface.t_nodes[k]
                gb = float(payoff(t, b))
                gx = float(payoff.partials(t, b)[1])
            else:
                o = surface.obstacle[k]
                gx = (o[s] - o[s - step]) / (x[s] - x[s - step])
                gb = o[s] + gx * (b - x[s])
            gaps[k] = (ve - gb) / (xe - b) - gx
        out[side] = gaps
    allg = np.concatenate([out["lower"], out["upper"]])
    allg = allg[np.isfinite(allg)]
    out["max"] = float(np.max(np.abs(allg))) if allg.size else 0.0
    return out
