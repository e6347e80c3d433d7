from dataclasses import replace

import numpy as np
import pytest

from stopflow import catalog as C
from stopflow.diagnostics import (DiagnosticsError, check_news_direction, check_single_crossing,
                                  classify_environment, compare_problems, corollary2_sign_table,
                                  gain_rate, is_convex, is_mc_problem, is_monotone,
                                  shifted_payoff_compare, shifted_problem,
                                  verify_boundary_monotonicity)
from stopflow.problem import make_grid
from stopflow.solver import extract_boundaries, solve

from conftest import problem


def _regrid(p, **kw):
    return replace(p, grid=replace(p.grid, **kw))


@pytest.fixture(scope="module")
def rising_cost():
    p = C.build("wald_rising_cost")
    s = solve(p)
    return p, s, extract_boundaries(s)


def test_gain_rate_wald():
    p = C.build("wald_stationary")
    x = np.array([0.2, 0.7])
    # payoff max(x, 1 - x) is linear on each side and mu = 0: h = -c - r g
    assert np.allclose(gain_rate(p, 0.0, x), -0.02 - 0.1 * np.maximum(x, 1 - x))


def test_single_crossing_verdicts():
    assert check_single_crossing(C.build("wald_stationary")).verdict_sc
    wiggly = problem(sigma="x*(1-x)", flow="40*(x - 0.15)*(x - 0.3)*(x - 0.85)", a="x", b="1 - x")
    prof = check_single_crossing(wiggly)
    assert not prof.verdict_sc and prof.failures


def test_stationary_is_flat():
    p = C.build("wald_stationary")
    s = solve(p, stationary=False)
    v = classify_environment(p, s)
    assert v.classification == "Flat"
    assert verify_boundary_monotonicity(extract_boundaries(s), v).passed


def test_rising_cost_decreasing(rising_cost):
    p, s, fb = rising_cost
    v = classify_environment(p, s)
    assert v.classification == "DecreasingStrict" and v.direction == "decreasing" and v.strict
    chk = verify_boundary_monotonicity(fb, v)
    assert chk.passed and min(chk.movement.values()) >= 2


def test_flattened_boundary_fails_strictness(rising_cost):
    p, s, fb = rising_cost
    v = classify_environment(p, s)
    flat = replace(fb, lower=np.full_like(fb.lower, fb.lower[0]), upper=np.full_like(fb.upper, fb.upper[0]),
                   lower_raw=None, upper_raw=None,
                   lower_index=np.full_like(fb.lower_index, fb.lower_index[0]),
                   upper_index=np.full_like(fb.upper_index, fb.upper_index[0]))
    assert not verify_boundary_monotonicity(flat, v).passed


def test_reversed_boundary_fails_direction(rising_cost):
    p, s, fb = rising_cost
    v = classify_environment(p, s)
    rev = replace(fb, lower=fb.lower[::-1].copy(), upper=fb.upper[::-1].copy(), lower_raw=None,
                  upper_raw=None, lower_index=fb.lower_index[::-1].copy(),
                  upper_index=fb.upper_index[::-1].copy())
    assert not verify_boundary_monotonicity(rev, v).passed


def test_compare_identical_configs():
    p = _regrid(C.build("wald_stationary"), nx=101, nt=20)
    rep = compare_problems(p, p, "flow_discount")
    assert rep.passed and rep.region_inclusion["violations"] == 0
    assert rep.value_dominance["worst"] == 0.0


def test_compare_flow_discount_direction():
    lo = problem(sigma="x*(1-x)", flow="-0.03", discount="0.12")
    hi = problem(sigma="x*(1-x)", flow="-0.02", discount="0.1")
    assert compare_problems(lo, hi, "flow_discount").passed
    with pytest.raises(DiagnosticsError):
        compare_problems(hi, lo, "flow_discount")


def test_compare_volatility_convex():
    lo, hi = C.build("put_sigma_low"), C.build("put_sigma_high")
    rep = compare_problems(_regrid(lo, nx=400), _regrid(hi, nx=400), "volatility")
    assert rep.passed and rep.hypothesis_check == "convex"
    d = rep.to_dict()
    assert d["kind"] == "ComparisonReport" and d["pass"] is True


def test_unknown_mode():
    p = C.build("wald_stationary")
    with pytest.raises(DiagnosticsError):
        compare_problems(p, p, "payoff")


def test_shift_reduction_matches_direct_solve():
    # zero payoff problem: the shift by g = 0 must leave the solution unchanged
    p = _regrid(C.build("leland"), nx=400, nt=20)
    a, b = solve(p), solve(shifted_problem(p, p.payoff))
    assert np.max(np.abs(a.values - b.values)) <= 1e-9 * a.scale


def test_shifted_payoff_compare_orders_payoffs():
    # put payoff (1 - x)^+ against the higher strike 1.1 - x: transformed flows -rK
    p = _regrid(C.build("put_stationary"), nx=800)
    rep = shifted_payoff_compare(p, "1.1 - x")
    assert rep.mode == "stopping_payoff" and rep.passed
    assert rep.details["hi"] == "reference"
    with pytest.raises(DiagnosticsError):
        shifted_payoff_compare(p, "1.05 - x + 0.1*x^2")


def test_sign_table_predictions():
    tab = corollary2_sign_table(C.build("put_sigma_falling"))
    assert tab["prediction"] == "narrowing" and tab["verified"]
    assert corollary2_sign_table(C.build("put_stationary"))["prediction"] in ("flat", "none", "narrowing")


def test_news_direction():
    p = C.build("deadline_forced")
    s = solve(_regrid(p, nx=201, nt=100))
    res = check_news_direction(p, s)
    assert res["declared"] == "bad" and res["match"]
    with pytest.raises(DiagnosticsError):
        check_news_direction(C.build("wald_stationary"), s)


def test_mc_problem_detection():
    assert is_mc_problem(C.build("wald_stationary"))
    assert is_mc_problem(C.build("put_stationary")) is False     # mu = r x
    assert not is_mc_problem(problem(mu="0.1*x", sigma="x*(1-x)"))


def test_convex_and_monotone_helpers():
    put = solve(C.build("put_stationary"))
    assert is_convex(put) and is_monotone(put, sign=-1)
    inv = solve(C.build("investment_stationary"))
    assert is_monotone(inv) and not is_monotone(inv, sign=-1)
