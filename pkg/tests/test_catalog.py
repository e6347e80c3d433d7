from dataclasses import replace

import numpy as np
import pytest

from stopflow import catalog as C
from stopflow.diagnostics import check_single_crossing, classify_environment
from stopflow.problem import COEFFS, make_grid, validate
from stopflow.solver import extract_boundaries, solve


def _regrid(p, **kw):
    return replace(p, grid=replace(p.grid, **kw))


@pytest.mark.parametrize("name", C.names())
def test_catalog_validates(name):
    p = C.build(name)
    assert validate(p) is p or validate(p) == p
    assert C.describe(name)


def test_unknown_model():
    with pytest.raises(C.CatalogError):
        C.build("nope")


def test_wald_kinks():
    assert C.make_wald(1.0, 1.0).x_c == pytest.approx(0.5)
    assert C.make_wald(2.0, 1.0).x_c == pytest.approx(1 / 3, abs=1e-9)


def test_binary_prior_recovers_wald_sigma():
    p = C.make_nonbinary(C.FiniteSupportPrior((-1.0, 1.0), (0.5, 0.5), 1.0))
    x = np.linspace(0.05, 0.95, 19)
    for t in (0.0, 1.0, 3.0):
        assert np.max(np.abs(p.sigma(t, x) - 2 * x * (1 - x))) < 1e-6


def test_three_point_sigma_decreasing():
    p = C.build("nonbinary")
    filt = p.meta["filter"]
    s = [float(filt.sigma(t, 0.5)) for t in (0.0, 0.5, 1.0, 2.0)]
    assert all(b < a for a, b in zip(s, s[1:]))


def test_nonbinary_table_matches_exact_filter():
    p = C.build("nonbinary")
    g = make_grid(p)
    filt = p.meta["filter"]
    T, X = np.meshgrid(g.t_nodes, g.x_nodes[1:-1], indexing="ij")
    assert np.max(np.abs(p.sigma(T, X) - filt.sigma(T, X))) < 1e-6


def test_nonbinary_symmetric_boundaries():
    p = C.make_nonbinary(C.FiniteSupportPrior((-1.0, -0.1, 0.1, 1.0), (0.3, 0.2, 0.2, 0.3), 1.0),
                         grid=C._wald_grid(nx=201, nt=50))
    fb = extract_boundaries(solve(p), x_c=0.5)
    assert np.max(np.abs(fb.lower + fb.upper - 1)) < 1e-6


def test_deadline_constant_rate_is_exact():
    base = C.build("wald_stationary")
    dl = C.apply_deadline(base, C.DeadlineSpec(0.3, 0.0))
    direct = C.make_wald(1.0, 1.0, 0.4, 1, 1, 0.02, grid=base.grid)
    g = make_grid(base)
    T, X = np.meshgrid(g.t_nodes, g.x_nodes, indexing="ij")
    for c in COEFFS:
        assert np.array_equal(np.broadcast_to(dl.coeff(c)(T, X), T.shape),
                              np.broadcast_to(direct.coeff(c)(T, X), T.shape))


def test_deadline_zero_rate_is_identity():
    base = C.build("wald_rising_cost")
    dl = C.apply_deadline(base, C.DeadlineSpec(0.0, "x"))
    assert all(dl.coeff(c) is base.coeff(c) for c in COEFFS)


def test_deadline_needs_scalar_discount():
    base = C.make_wald().with_fields(discount="0.1 + 0.01*t")
    with pytest.raises(C.CatalogError):
        C.apply_deadline(base, C.DeadlineSpec(0.1, 0.0))


@pytest.mark.parametrize("name", ["deadline_forced", "deadline_revelation"])
def test_deadline_bands_narrow(name):
    p = C.build(name)
    fb = extract_boundaries(solve(p))
    assert fb.upper[-1] - fb.lower[-1] < fb.upper[0] - fb.lower[0] - 2 * fb.cell


def test_refusals():
    with pytest.raises(C.CatalogError):
        C.make_put(K=0.0)
    with pytest.raises(C.CatalogError):
        C.make_investment(mu=0.07, r=0.06)
    with pytest.raises(C.CatalogError):
        C.make_leland(G=0.1)


def test_leland_threshold_and_penalty_direction():
    b = {}
    for G in (0.0, -0.1, -0.3):
        p = C.make_leland(G=G)
        b[G] = extract_boundaries(solve(p), x_c=p.x_c).lower[0]
    assert b[0.0] == pytest.approx(C.leland_threshold(0.06, 0.03, 0.01, 0.25, 0.05), rel=5e-3)
    assert b[-0.3] < b[-0.1] < b[0.0]


def test_kappa_roots():
    k = C.investment_kappa(0.03, 0.2, 0.06)
    assert k == pytest.approx(1.5) and 0.5 * 0.04 * k * (k - 1) + 0.03 * k - 0.06 == pytest.approx(0)
    assert C.investment_kappa(0.0, 0.2, 0.02) == pytest.approx((1 + 5 ** 0.5) / 2)
    q = C.leland_kappa(0.01, 0.25, 0.05)
    assert 0.5 * 0.0625 * q * (q + 1) - 0.01 * q - 0.05 == pytest.approx(0, abs=1e-12)


def test_investment_cost_falling_boundary_decreasing():
    p = C.build("investment_cost_falling")
    fb = extract_boundaries(solve(p))
    assert np.all(np.diff(fb.upper[:-1]) <= fb.cell) and fb.upper[-2] < fb.upper[0] - 2 * fb.cell


def test_put_rising_sigma_lowers_threshold():
    p = C.make_put(sigma="0.2*(1 + 0.05*t)", horizon=40.0, grid=C._gbm_grid(0.02, 200.0, nx=800, nt=400))
    fb = extract_boundaries(solve(p), x_c=1.0)
    b = fb.lower[:300]
    cells = np.diff(fb.x_nodes)[np.maximum(fb.lower_index[:300], 0)]
    assert np.all(np.diff(b) <= cells[1:]) and b[-1] < b[0] - 2 * cells.max()


def test_stationary_models_flat():
    for name in ("wald_stationary", "investment_stationary", "put_stationary"):
        p = C.build(name)
        s = solve(_regrid(p, nt=40), stationary=False)
        assert classify_environment(p, s).classification == "Flat"


@pytest.mark.parametrize("name", ["wald_stationary", "wald_rising_cost", "put_stationary",
                                  "investment_stationary", "nonbinary", "deadline_forced"])
def test_single_crossing_claims(name):
    assert check_single_crossing(C.build(name)).verdict_sc
