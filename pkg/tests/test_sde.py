from dataclasses import replace

import numpy as np
import pytest

from stopflow import catalog as C
from stopflow.sde import (SimulationError, accuracy_profile, coupled_stopping_rank, estimate_value_mc,
                          simulate_stopped)
from stopflow.solver import extract_boundaries, solve

from conftest import problem


@pytest.fixture(scope="module")
def wald():
    p = C.build("wald_stationary")
    return p, extract_boundaries(solve(p))


def test_immediate_rule_pays_g(wald):
    p, _ = wald
    est = estimate_value_mc(p, "immediate", 500, 1, x0=0.3)
    assert est["mean"] == pytest.approx(0.7) and est["se"] == 0.0
    assert np.all(est["ensemble"].tau == 0)


def test_all_stop_boundary():
    p = problem(sigma="1e-9", a="x", b="1 - x")
    fb = extract_boundaries(solve(p), x_c=0.5)
    ens = simulate_stopped(p, fb, 200, 4, x0=0.25)
    assert np.all(ens.tau == 0) and np.all(ens.payoff == 0.75)


def test_reproducible_bits(wald):
    p, fb = wald
    a = simulate_stopped(p, fb, 300, 11, 1e-3, x0=0.5)
    b = simulate_stopped(p, fb, 300, 11, 1e-3, x0=0.5)
    for key in ("tau", "x_tau", "payoff", "alternative"):
        assert getattr(a, key).tobytes() == getattr(b, key).tobytes()
    c = simulate_stopped(p, fb, 300, 12, 1e-3, x0=0.5)
    assert not np.array_equal(a.tau, c.tau)


def test_path_batches_agree(wald):
    p, fb = wald
    full = simulate_stopped(p, fb, 200, 5, 1e-3, x0=0.5)
    assert full.path_id[0] == 0 and len(np.unique(full.path_id)) == 200


def test_symmetric_wald_hits(wald):
    p, fb = wald
    ens = simulate_stopped(p, fb, 4000, 2, 1e-3, x0=0.5)
    up = (ens.x_tau > 0.5).mean()
    se = np.sqrt(0.25 / ens.n_paths)
    assert abs(up - 0.5) <= 3 * se


def test_holes_refused(wald):
    p, fb = wald
    with pytest.raises(SimulationError):
        simulate_stopped(p, replace(fb, valid=False), 10, 0)


def test_coupled_identical_problems_tie(wald):
    p, fb = wald
    res = coupled_stopping_rank(p, p, fb, fb, 500, 3, 1e-3, x0=0.5)
    assert res["passed"] and res["violations"] == 0 and res["ties"] == 500


@pytest.mark.parametrize("lo_kw,hi_kw", [(dict(r=0.15), dict(r=0.05)), (dict(c=0.03), dict(c=0.01))])
def test_coupled_stopping_ranking(lo_kw, hi_kw):
    grid = C._wald_grid(nx=201, nt=50)
    lo = C.make_wald(**{**dict(r=0.1, c=0.02), **lo_kw}, grid=grid)
    hi = C.make_wald(**{**dict(r=0.1, c=0.02), **hi_kw}, grid=grid)
    blo, bhi = extract_boundaries(solve(lo)), extract_boundaries(solve(hi))
    res = coupled_stopping_rank(lo, hi, blo, bhi, 2000, 8, 1e-3, x0=0.5)
    assert res["passed"] and res["violations"] == 0


def test_stationary_accuracy_flat(wald):
    p, fb = wald
    ens = simulate_stopped(p, fb, 20000, 6, 1e-3, x0=0.5)
    prof = accuracy_profile(ens, fb, bins=5)
    assert prof.trend["p_decreasing"] > 0.05 and prof.trend["p_increasing"] > 0.05
    rows = [r for r in prof.rows if not r["absent"]]
    assert rows
    for row in rows:
        assert row["ci_lo"] <= row["theory"] <= row["ci_hi"]
        assert row["theory"] == pytest.approx(fb.upper[0])


def test_rising_cost_accuracy_decreasing():
    p = C.build("wald_rising_cost")
    fb = extract_boundaries(solve(p))
    ens = simulate_stopped(p, fb, 20000, 7, 1e-3, x0=0.5)
    assert accuracy_profile(ens, fb).trend["p_decreasing"] < 0.05


def test_small_bins_absent(wald):
    p, fb = wald
    ens = simulate_stopped(p, fb, 100, 1, 1e-3, x0=0.5)
    prof = accuracy_profile(ens, fb, bins=10, min_count=30)
    sparse = [r for r in prof.rows if r["count"] < 30]
    assert sparse and all(r["absent"] and np.isnan(r["accuracy"]) for r in sparse)


def test_put_dt_refinement():
    p = C.build("put_stationary")
    fb = extract_boundaries(solve(p))
    a = estimate_value_mc(p, fb, 4000, 9, 1e-2, x0=1.0)
    b = estimate_value_mc(p, fb, 4000, 9, 5e-3, x0=1.0)
    assert abs(a["mean"] - b["mean"]) < 2 * max(a["se"], b["se"])


def test_mc_below_pde_for_admissible_rules(wald):
    p, fb = wald
    s = solve(p)
    v = float(np.interp(0.5, s.x_nodes, s.values[0]))
    for rule in ("immediate", fb):
        est = estimate_value_mc(p, rule, 3000, 10, 1e-3, x0=0.5)
        assert est["mean"] <= v + 3 * est["se"] + 5e-3 * s.scale
