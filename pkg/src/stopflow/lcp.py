"""Tridiagonal linear complementarity problems.

Find v with  M v - q >= 0,  v - g >= 0,  (M v - q)(v - g) = 0,
where M is a tridiagonal M-matrix stored as (lower, diag, upper) and rows
flagged ``fixed`` are pinned to v = g.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import solve_banded


@dataclass
class LCPResult:
    v: np.ndarray
    stop: np.ndarray
    iterations: int
    converged: bool


def matvec(lo, di, up, v):
    out = di * v
    out[1:] += lo[1:] * v[:-1]
    out[:-1] += up[:-1] * v[1:]
    return out


def _solve_policy(lo, di, up, q, g, stop):
    # stop nodes are eliminated into the right-hand side, so the banded system
    # decouples and v = g holds exactly there
    n = len(di)
    ab = np.empty((3, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = np.where(stop[:-1] | stop[1:], 0.0, up[:-1])
    ab[1] = np.where(stop, 1.0, di)
    ab[2, -1] = 0.0
    ab[2, :-1] = np.where(stop[1:] | stop[:-1], 0.0, lo[1:])
    rhs = np.where(stop, g, q)
    free = ~stop
    rhs[1:] -= np.where(free[1:] & stop[:-1], lo[1:] * g[:-1], 0.0)
    rhs[:-1] -= np.where(free[:-1] & stop[1:], up[:-1] * g[1:], 0.0)
    v = solve_banded((1, 1), ab, rhs, check_finite=False)
    # two steps of iterative refinement: the LU of the stiff rows leaks error
    # into rows with small coefficients
    for _ in range(2):
        r = rhs - _band_matvec(ab, v)
        v = v + solve_banded((1, 1), ab, r, check_finite=False)
    return v


def _band_matvec(ab, v):
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def _pin_undershoot(lo, di, up, q, g, v, stop, it):
    """Round-off can leave a free node a hair below g; pin such nodes and re-solve."""
    for _ in range(len(v)):
        low = (~stop) & (v < g)
        if not low.any():
            break
        stop = stop | low
        v = _solve_policy(lo, di, up, q, g, stop)
        it += 1
    return LCPResult(v, stop, it, True)


def howard(lo, di, up, q, g, fixed, stop0=None, max_iter: int = 500) -> LCPResult:
    """Policy iteration; exact in finitely many steps for M-matrices."""
    stop = fixed.copy() if stop0 is None else (stop0 | fixed)
    seen = set()
    v = g
    for it in range(1, max_iter + 1):
        v = _solve_policy(lo, di, up, q, g, stop)
        w = matvec(lo, di, up, v) - q
        new = ((v - g) <= w) | fixed
        if np.array_equal(new, stop):
            return _pin_undershoot(lo, di, up, q, g, v, stop, it)
        key = new.tobytes()
        if key in seen:
            # two-cycle on round-off ties: settle on the stop-maximal policy
            stop = stop | new
            v = _solve_policy(lo, di, up, q, g, stop)
            return _pin_undershoot(lo, di, up, q, g, v, stop, it)
        seen.add(key)
        stop = new
    return LCPResult(v, stop, max_iter, False)


@njit(cache=True)
def _psor_kernel(lo, di, up, q, g, fixed, v, omega, tol, max_sweeps):
    n = len(di)
    for sweep in range(max_sweeps):
        err = 0.0
        for i in range(n):
            if fixed[i]:
                continue
            s = q[i]
            if i > 0:
                s -= lo[i] * v[i - 1]
            if i < n - 1:
                s -= up[i] * v[i + 1]
            y = v[i] + omega * (s / di[i] - v[i])
            if y < g[i]:
                y = g[i]
            d = abs(y - v[i])
            if d > err:
                err = d
            v[i] = y
        if err < tol:
            return sweep + 1
    return -1


def psor(lo, di, up, q, g, fixed, v0=None, omega: float = 1.5, tol: float = 1e-12,
         max_sweeps: int = 100_000) -> LCPResult:
    v = np.maximum(g, g if v0 is None else v0).astype(float).copy()
    v[fixed] = g[fixed]
    sweeps = _psor_kernel(lo, di, up, q, g, fixed, v, omega, tol, max_sweeps)
    w = matvec(lo, di, up, v) - q
    stop = ((v - g) <= w) | fixed
    return LCPResult(v, stop, max_sweeps if sweeps < 0 else sweeps, sweeps >= 0)
