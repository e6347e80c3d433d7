import json
import math

import numpy as np
import pytest

from stopflow import catalog as C
from stopflow.config import ConfigError, load_problem, parse_problem, print_problem, to_dict
from stopflow.problem import COEFFS, ProblemError, make_grid

from conftest import doc, problem


def test_put_document_maps_fields():
    d = {"domain": {"lower": 0.0}, "horizon": "perpetual",
         "coefficients": {"mu": "0.05*x", "sigma": "0.3*x", "flow": 0, "discount": 0.05},
         "payoff": {"branch_a": "1 - x", "branch_b": 0, "x_c": 1.0}}
    p = parse_problem(json.dumps(d))
    assert p.perpetual and p.domain == (0.0, math.inf)
    x = np.array([0.5, 2.0])
    assert np.allclose(p.mu(0, x), 0.05 * x) and np.allclose(p.sigma(0, x), 0.3 * x)
    assert np.allclose(p.g(0, x), [0.5, 0.0])


def test_zero_sigma_rejected_with_witness():
    with pytest.raises(ConfigError, match="sigma"):
        parse_problem(json.dumps(doc(sigma="0")))
    with pytest.raises(ProblemError) as info:
        problem(sigma="x - 0.5")
    assert info.value.witness is not None


def test_negative_discount_and_bad_domain():
    with pytest.raises(ProblemError, match="discount"):
        problem(discount="-0.1")
    with pytest.raises(ProblemError, match="domain"):
        problem(lower=1.0, upper=0.0)


def test_perpetual_needs_discount_or_negative_flow():
    with pytest.raises(ProblemError, match="perpetual"):
        problem(discount="0", horizon="perpetual")
    problem(discount="0", flow="-0.1", horizon="perpetual")


def test_double_crossing_payoff_rejected():
    with pytest.raises(ProblemError, match="payoff"):
        problem(a="(x - 0.3)*(x - 0.7)", b="0")


def test_wald_sigma():
    p = C.build("wald_stationary")
    x = np.linspace(0.05, 0.95, 19)
    assert np.allclose(p.sigma(0.0, x), 2 * x * (1 - x), rtol=0, atol=1e-15)


def test_syntax_errors_reported():
    with pytest.raises(ConfigError, match="line"):
        parse_problem('{"domain": ', "json")
    with pytest.raises(ConfigError, match="coefficients.mu"):
        parse_problem(json.dumps(doc(mu="x +")))


def test_kink_located_by_bisection():
    p = problem(a="2*x", b="1 - x")
    assert abs(p.x_c - 1 / 3) < 1e-9


@pytest.mark.parametrize("name", [n for n in C.names() if n != "nonbinary"])
def test_catalog_round_trip_exact(name):
    p = C.build(name)
    for fmt in ("json", "toml"):
        q = parse_problem(print_problem(p, fmt), fmt)
        lo, hi = make_grid(p).x_nodes[[0, -1]]
        T, X = np.meshgrid(np.linspace(0, p.window, 100), np.linspace(lo, hi, 100), indexing="ij")
        for c in COEFFS:
            assert np.array_equal(np.broadcast_to(p.coeff(c)(T, X), T.shape),
                                  np.broadcast_to(q.coeff(c)(T, X), T.shape)), c
        assert np.array_equal(p.g(T, X), q.g(T, X))
        assert q.grid == p.grid and q.horizon == p.horizon


def test_catalog_round_trip_tabulated():
    p = C.build("nonbinary")
    q = parse_problem(print_problem(p))
    g = make_grid(p)
    T, X = np.meshgrid(np.linspace(0, p.window, 100), np.linspace(g.x_nodes[1], g.x_nodes[-2], 100),
                       indexing="ij")
    assert np.max(np.abs(p.sigma(T, X) - q.sigma(T, X))) < 1e-12


def test_load_from_file(tmp_path):
    path = tmp_path / "p.toml"
    path.write_text(print_problem(C.build("put_stationary"), "toml"))
    assert to_dict(load_problem(path)) == to_dict(C.build("put_stationary"))


def test_model_shorthand_in_config():
    p = parse_problem(json.dumps({"model": {"name": "wald_stationary", "params": {"c": 0.05}}}))
    assert float(p.flow(0, 0.3)) == -0.05


@pytest.mark.parametrize("model", [{"name": "nosuchmodel"}, {"name": "put_stationary", "params": {"zz": 1}},
                                   {"params": {}}])
def test_model_shorthand_errors(model):
    with pytest.raises(ConfigError, match="model"):
        parse_problem(json.dumps({"model": model}))


def test_grid_invariants():
    p = problem(a="x", b="1 - x", nx=40)
    g = make_grid(p)
    assert g.nx >= 3 and g.nt >= 2
    assert np.all(np.diff(g.x_nodes) > 0) and np.all(np.diff(g.t_nodes) > 0)
    assert g.x_nodes[0] > 0 and g.x_nodes[-1] < 1
    assert np.min(np.abs(g.x_nodes - 0.5)) < 1e-12
    put = C.build("put_stationary")
    gp = make_grid(put)
    assert np.min(np.abs(gp.x_nodes - 1.0)) < 1e-12 and gp.x_nodes[0] > 0
