from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopflow import catalog as C
from stopflow.lcp import howard, matvec, psor
from stopflow.solver import (CONTINUE, STOP, SolverError, SolverSettings, extract_boundaries, smooth_fit_gap, solve,
                             solve_hjb, solve_stationary)

from conftest import problem


def _regrid(p, **kw):
    return replace(p, grid=replace(p.grid, **kw))


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 40), st.integers(0, 2 ** 31))
def test_howard_and_psor_solve_the_lcp(n, seed):
    rng = np.random.default_rng(seed)
    lo = -rng.uniform(0, 1, n)
    up = -rng.uniform(0, 1, n)
    di = -lo - up + rng.uniform(0.01, 1, n)
    q = rng.normal(size=n)
    g = rng.normal(size=n)
    fixed = np.zeros(n, dtype=bool)
    fixed[[0, -1]] = True
    h = howard(lo, di, up, q, g, fixed)
    p = psor(lo, di, up, q, g, fixed, tol=1e-14)
    assert h.converged and p.converged
    for v in (h.v, p.v):
        w = matvec(lo, di, up, v) - q
        free = ~fixed
        assert np.all(v >= g - 1e-12)
        assert np.all(w[free] >= -1e-9)
        assert np.all(np.abs((v - g) * w)[free] <= 1e-9)
    assert np.allclose(h.v, p.v, atol=1e-8)


def test_settings_validation():
    for bad in (dict(psor_omega=2.0), dict(theta=0.4), dict(tol_pde=0.0), dict(lcp="cg")):
        with pytest.raises(ValueError):
            SolverSettings(**bad)


def test_frozen_diffusion_stops_everywhere():
    p = problem(sigma="1e-9", mu="0", discount="0.1", flow="0", a="x", b="1 - x")
    s = solve_hjb(p)
    assert np.all(s.region == STOP)
    assert np.array_equal(s.values, s.obstacle)
    fb = extract_boundaries(s, x_c=0.5)
    assert np.all(fb.empty) and np.all(fb.lower == 0.5) and np.all(fb.upper == 0.5)
    sf = smooth_fit_gap(s, fb)
    assert sf["max"] == 0.0


def test_terminal_layer_and_invariants():
    p = problem(sigma="2*x*(1-x)", flow="-0.02", nx=81, nt=40)
    s = solve_hjb(p)
    assert np.array_equal(s.values[-1], s.obstacle[-1])
    rep = s.invariant_report()
    assert rep["obstacle_ok"] and rep["complementarity_ok"]


def test_symmetric_wald_value():
    s = solve(_regrid(C.build("wald_stationary"), nx=201, nt=50), stationary=False)
    assert np.max(np.abs(s.values - s.values[:, ::-1])) < 1e-8


def test_psor_matches_howard():
    p = _regrid(C.build("wald_rising_cost"), nx=81, nt=40)
    a = solve_hjb(p)
    b = solve_hjb(p, settings=SolverSettings(lcp="psor", tol_pde=1e-11))
    assert np.max(np.abs(a.values - b.values)) < 1e-7


def test_psor_nonconvergence_reported():
    p = _regrid(C.build("wald_rising_cost"), nx=81, nt=10)
    with pytest.raises(SolverError):
        solve_hjb(p, settings=SolverSettings(lcp="psor", max_sweeps=2))


def test_positive_data_gives_positive_value():
    p = problem(mu="0.1*(0.5 - x)", sigma="0.4*x*(1-x)", flow="x^2", discount="0.05 + x",
                a="x", b="0.2*(1 - x)", nx=81, nt=40)
    assert solve_hjb(p).values.min() >= 0


def test_x_monotone_when_data_monotone():
    p = problem(mu="0.2*x*(1-x)", sigma="0.5*x*(1-x)", flow="0.1*x", discount="0.1",
                a="x", b="0.3", nx=101, nt=40)
    s = solve_hjb(p)
    assert np.all(np.diff(s.values, axis=1) >= -1e-9 * s.scale)


def test_convexity_on_mc_problem():
    p = problem(mu="0", sigma="(1 + x)*x*(1-x)", flow="0.2*(x - 0.5)^2 - 0.03", discount="0.2",
                a="x", b="1 - x", nx=101, nt=40)
    s = solve_hjb(p)
    x = s.x_nodes
    slope = np.diff(s.values, axis=1) / np.diff(x)
    assert np.all(np.diff(slope, axis=1) >= -1e-7 * s.scale)


def test_stationary_solution_is_single_layer():
    s = solve_stationary(C.build("put_stationary"))
    assert s.values.shape[0] == 1
    assert s.info.get("layers", 1) >= 1


def _put_error(nx):
    s = solve(_regrid(C.build("put_stationary"), nx=nx))
    fb = extract_boundaries(s, x_c=1.0)
    b = C.put_threshold(1.0, 0.05, 0.3)
    return abs(fb.lower[0] - b) / b, smooth_fit_gap(s, fb)["max"]


@pytest.fixture(scope="module")
def put_refinement():
    return {nx: _put_error(nx) for nx in (200, 400, 800, 1600, 3200)}


@pytest.mark.xfail(strict=True, reason="the 200-node threshold error is a snapping cancellation, "
                                       "smaller than at 400 nodes")
def test_put_threshold_converges_from_200(put_refinement):
    errs = [put_refinement[n][0] for n in (200, 400, 800, 1600)]
    assert all(b <= 1.1 * a for a, b in zip(errs, errs[1:]))


def test_put_threshold_converges_from_400(put_refinement):
    errs = [put_refinement[n][0] for n in (400, 800, 1600, 3200)]
    assert all(b <= 1.1 * a for a, b in zip(errs, errs[1:]))


def test_smooth_fit_refinement(put_refinement):
    gaps = [put_refinement[n][1] for n in (200, 400, 800, 1600, 3200)]
    assert put_refinement[1600][1] <= 0.02
    for a, b in zip(gaps, gaps[1:]):
        assert 0.3 <= b / a <= 0.8


def test_boundaries_bracket_continue_nodes():
    s = solve_hjb(_regrid(C.build("wald_rising_cost"), nx=201, nt=50))
    fb = extract_boundaries(s)
    x = s.x_nodes
    cell = np.max(np.diff(x))
    for k in range(s.values.shape[0]):
        cont = x[s.region[k] == CONTINUE]
        if cont.size:
            assert fb.lower[k] <= fb.x_c <= fb.upper[k]
            assert cont.min() - cell <= fb.lower[k] <= cont.min() + 1e-12
            assert cont.max() - 1e-12 <= fb.upper[k] <= cont.max() + cell
    assert fb.valid


def test_hole_detection():
    s = solve_hjb(_regrid(C.build("wald_stationary"), nx=101, nt=10))
    s.region[3, 50] = STOP
    fb = extract_boundaries(s)
    assert not fb.valid and fb.hole_layers == [3]
    assert np.isfinite(fb.lower[3]) and np.isfinite(fb.upper[3])
