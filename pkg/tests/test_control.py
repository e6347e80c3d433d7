from dataclasses import replace

import numpy as np
import pytest

from stopflow import catalog as C
from stopflow.control import action_labels, solve_controlled
from stopflow.diagnostics import compare_problems, controlled_monotonicity_check
from stopflow.problem import Action
from stopflow.solver import CONTINUE, solve, solve_hjb

from conftest import problem

BASE = dict(mu="0.1*(0.5 - x)", sigma="x*(1-x)", flow="-0.02", discount="0.1", a="x", b="1 - x",
            nx=81, nt=40)


def _act(name, **kw):
    return {"name": name, **kw}


def test_singleton_equivalence():
    plain = problem(**BASE)
    ctl = problem(**BASE, actions=[_act("only")])
    a, b = solve_hjb(plain), solve_controlled(ctl)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12


def test_dominant_flow_action_chosen():
    p = problem(**BASE, actions=[_act("rich", flow="-0.01"), _act("poor", flow="-0.03")])
    s = solve_controlled(p)
    labels = action_labels(s)
    cont = s.region == CONTINUE
    assert cont.any() and np.all(labels[cont] == "rich")


def test_nested_menus_never_lower_value():
    small = problem(**BASE, actions=[_act("slow", sigma="0.5*x*(1-x)")])
    big = problem(**BASE, actions=[_act("slow", sigma="0.5*x*(1-x)"),
                                   _act("fast", sigma="x*(1-x)", flow="-0.04")])
    a, b = solve_controlled(small), solve_controlled(big)
    assert np.all(b.values >= a.values - 1e-10)


def test_tie_break_lowest_index():
    p = problem(**BASE, actions=[_act("first"), _act("second")])
    labels = action_labels(solve_controlled(p))
    cont = solve_controlled(p).region == CONTINUE
    assert np.all(labels[cont] == "first")


def test_menu_sandwich():
    menu = replace(C.build("wald_menu"), grid=replace(C.build("wald_menu").grid, nx=101, nt=50))
    s = solve_controlled(menu)
    lo = C.make_wald(1.0, 1.0, 0.1, "0.5", "1", "0.02 + 0.05*0.25", grid=menu.grid)
    hi = C.make_wald(1.0, 1.0, 0.1, "1", "1", "0.02", grid=menu.grid)
    vlo, vhi = solve_hjb(lo).values, solve_hjb(hi).values
    assert np.all(s.values >= vlo - 1e-10) and np.all(s.values <= vhi + 1e-10)


def test_time_invariant_controlled_is_flat():
    kw = dict(BASE, horizon="perpetual")
    p = problem(**kw, actions=[_act("a", flow="-0.01"), _act("b", sigma="0.5*x*(1-x)")])
    v = controlled_monotonicity_check(solve(p), p)
    assert v.classification == "Flat"
    assert v.iov_min == 0 and v.dov_max == 0


def test_controlled_flow_dominance():
    acts = [_act("a", flow="-0.03"), _act("b", sigma="0.6*x*(1-x)", flow="-0.02")]
    lo = problem(**BASE, actions=acts)
    hi = problem(**BASE, actions=[dict(a, flow=a["flow"] + " + 0.01") for a in acts])
    rep = compare_problems(lo, hi, "flow_discount")
    assert rep.passed
