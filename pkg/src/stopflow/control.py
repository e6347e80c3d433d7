"""Optimal stopping of a controlled diffusion with a finite action menu.

Per time layer a Howard outer loop freezes a per-node action, solves the
obstacle LCP, then re-maximizes ``A_a v + f_a`` node by node; an action is
switched only when the improvement exceeds a tolerance, ties going to the
lowest action index.
"""
from __future__ import annotations

import time

import numpy as np

from . import lcp
from .problem import Grid, StoppingProblem, make_grid
from .solver import (SolverError, SolverSettings, ValueSurface, _backward,
                     _coeff_arrays, _fixed_mask, _residual, classify, generator, lcp_obstacle, scale_of,
                     solve_lcp)

MAX_OUTER = 100


class _Controller:
    def __init__(self, problem: StoppingProblem, grid: Grid, settings: SolverSettings):
        self.problem = problem
        self.grid = grid
        self.settings = settings
        self.x = grid.x_nodes
        self.cols = np.arange(len(self.x))
        self.pol = None
        self.next_ops = None

    def ops(self, t):
        rows = []
        for a in self.problem.actions:
            mu, sig, f, r = _coeff_arrays(a, t, self.x)
            lo, di, up = generator(self.x, mu, sig, r)
            rows.append((lo, di, up, np.array(f, dtype=float)))
        return tuple(np.stack(z) for z in zip(*rows))

    def _pick(self, ops, pol):
        c = self.cols
        return tuple(o[pol, c] for o in ops)

    def _gen_values(self, ops, v):
        lo, di, up, f = ops
        out = di * v + f
        out[:, 1:] += lo[:, 1:] * v[:-1]
        out[:, :-1] += up[:, :-1] * v[1:]
        return out

    def _improve(self, vals, pol, tol):
        best = np.argmax(vals, axis=0)  # first maximizer = lowest index
        cur = vals[pol, self.cols]
        gain = vals[best, self.cols] - cur
        return np.where(gain > tol, best, pol)

    def _solve_policy_loop(self, ops, make_mq, g, fixed, scale, pol, weight):
        tol = 1e-3 * self.settings.tol_pde * scale
        stop = None
        its = 0
        v = g
        for outer in range(MAX_OUTER):
            lo, di, up, f = self._pick(ops, pol)
            M, q = make_mq(lo, di, up, f)
            res = solve_lcp(*M, q, g, fixed, self.settings, stop, v, scale)
            its += res.iterations
            if not res.converged:
                raise SolverError("LCP did not converge inside the policy loop")
            v, stop = res.v, res.stop
            new = self._improve(weight * self._gen_values(ops, v), pol, tol)
            new[fixed] = pol[fixed]
            if np.array_equal(new, pol):
                return v, M, q, pol, its, True
            pol = new
        return v, M, q, pol, its, False

    def layer(self, k, t, dt, v_next, g, fixed, scale):
        theta = self.settings.theta
        ops = self.ops(t)
        pol = np.zeros(len(self.x), dtype=np.int16) if self.pol is None else self.pol.copy()
        extra = 0.0
        if theta < 1:
            if self.next_ops is None:
                self.next_ops = self.ops(self.grid.t_nodes[k + 1])
            lo1, di1, up1, f1 = self._pick(self.next_ops, self.pol if self.pol is not None
                                           else np.zeros(len(self.x), dtype=np.int16))
            extra = (1 - theta) * (lcp.matvec(lo1, di1, up1, v_next) + f1)

        def make_mq(lo, di, up, f):
            return (-theta * lo, 1.0 / dt - theta * di, -theta * up), v_next / dt + theta * f + extra

        v, M, q, pol, its, ok = self._solve_policy_loop(ops, make_mq, g, fixed, scale, pol, theta)
        if not ok:
            raise SolverError(f"policy iteration cycled at t={t:.6g}")
        self.pol = pol
        self.next_ops = ops
        return v, _residual(*M, q, v, fixed), pol, its

    def stationary(self, t_freeze):
        s = self.settings
        x = self.x
        g_obs = np.asarray(self.problem.g(t_freeze, x), dtype=float) * np.ones_like(x)
        fixed = _fixed_mask(len(x))
        g = lcp_obstacle(self.problem, t_freeze, x, g_obs)
        scale = scale_of(g_obs, g)
        ops = self.ops(t_freeze)
        dt = s.stationary_dt
        v = g.copy()
        pol = np.zeros(len(x), dtype=np.int16)
        t0 = time.perf_counter()
        for layer in range(1, s.stationary_max_layers + 1):
            v_prev = v

            def make_mq(lo, di, up, f):
                return (-lo, 1.0 / dt - di, -up), v_prev / dt + f

            v, M, q, pol, its, ok = self._solve_policy_loop(ops, make_mq, g, fixed, scale, pol, 1.0)
            if not ok:
                raise SolverError("policy iteration cycled in the stationary solve")
            change = float(np.max(np.abs(v - v_prev)))
            if change < s.stationary_tol * scale:
                break
        else:
            raise SolverError("controlled stationary iteration did not settle")
        lo, di, up, f = self._pick(ops, pol)
        resid = _residual(-lo, -di, -up, f, v, fixed)
        scale = scale_of(g_obs, v)
        reg = classify(v, g_obs, resid, s.tol_obstacle * scale, s.tol_pde * scale)
        self.pol = pol
        sgrid = Grid(np.array([t_freeze]), x.copy(), self.grid.spacing, self.grid.ic)
        info = {"layers": layer, "last_change": change, "wall": time.perf_counter() - t0,
                "kind": "stationary"}
        return ValueSurface(sgrid, v[None], reg[None], resid[None], g_obs[None], scale, s,
                            pol[None].copy(), tuple(a.name for a in self.problem.actions), info)


def solve_controlled(problem: StoppingProblem, grid: Grid | None = None,
                     settings: SolverSettings | None = None) -> ValueSurface:
    """Backward sweep with per-node action maximization (finite menu)."""
    if not problem.actions:
        raise ValueError("solve_controlled needs a non-empty action list")
    settings = settings or SolverSettings()
    grid = grid or make_grid(problem)
    return _backward(problem, grid, settings, _Controller(problem, grid, settings))


def solve_controlled_stationary(problem: StoppingProblem, grid: Grid | None = None,
                                settings: SolverSettings | None = None,
                                t_freeze: float | None = None) -> ValueSurface:
    settings = settings or SolverSettings()
    grid = grid or make_grid(problem)
    ctl = _Controller(problem, grid, settings)
    return ctl.stationary(0.0 if t_freeze is None else t_freeze)


def action_labels(surface: ValueSurface) -> np.ndarray:
    """Per-node action names (object array); empty string where undefined."""
    if surface.action is None:
        return np.full(surface.values.shape, "", dtype=object)
    names = np.array(surface.action_names, dtype=object)
    return names[surface.action]
