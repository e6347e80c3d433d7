import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopflow.expr import Expression, ExpressionSyntaxError, NonFiniteError, parse
from stopflow.fields import CoefficientField, DomainError, KinkError, eval_field, field_partials


def expr(src):
    return CoefficientField.expression(src)


def test_arithmetic_examples():
    assert eval_field(expr("x*(1-x)*2"), 0.5, 0.5) == 0.5
    # oracle: mpmath-free high precision value of 2/e
    assert eval_field(expr("exp(-t)*x"), 1.0, 2.0) == pytest.approx(0.7357588823428847, rel=1e-15)
    assert eval_field(expr("2^3 + max(t, x) - min(1, 4)"), 0.5, 3.0) == 10.0


def test_tabulated_node_is_exact():
    ts, xs = np.linspace(0, 1, 5), np.linspace(0, 2, 7)
    vals = np.random.default_rng(0).normal(size=(5, 7))
    f = CoefficientField.tabulated(ts, xs, vals)
    for k in range(5):
        for i in range(7):
            assert f(ts[k], xs[i]) == vals[k, i]


def test_partials_examples():
    assert field_partials(CoefficientField.constant(3.0), 0.2, 0.4) == (0.0, 0.0, 0.0)
    _, fx, fxx = field_partials(expr("x^2"), 0.0, 3.0)
    assert (fx, fxx) == (6.0, 2.0)
    ts = np.arange(0, 1.0005, 1e-3)
    tab = CoefficientField.tabulated(ts, np.array([0.0, 1.0]), np.exp(-ts)[:, None] * np.ones(2))
    ft, _, _ = field_partials(tab, 0.0, 0.5)
    assert abs(ft + 1) < 1e-5


def test_kink_and_domain_errors():
    with pytest.raises(KinkError):
        field_partials(expr("max(x, 1 - x)"), 0.0, 0.5, kinks=(0.5,))
    with pytest.raises(DomainError):
        eval_field(expr("x"), 0.0, 2.0, domain=(0.0, 1.0))
    with pytest.raises(DomainError):
        eval_field(expr("x"), -1.0, 0.5)


def test_syntax_error_has_position():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("x + * 2")
    assert info.value.column == 5


def test_nonfinite_names_subexpression():
    with pytest.raises(NonFiniteError) as info:
        eval_field(expr("1 + log(x)"), 0.0, -1.0)
    assert "log(x)" in str(info.value)


def test_unknown_symbol_rejected():
    with pytest.raises(ExpressionSyntaxError):
        Expression("y + 1")


@given(st.floats(0, 5), st.floats(0.1, 5))
def test_deterministic_bits(t, x):
    f = expr("exp(-t)*sqrt(x) + x^1.5*log(1 + t)")
    a, b = f(t, x), f(t, x)
    assert np.asarray(a).tobytes() == np.asarray(b).tobytes()


SMOOTH = ["exp(-t)*x^2", "sqrt(x)*(1 + t)", "log(1 + x*t) + x/(1 + t)", "x^3 - 2*t*x", "exp(x/4)*t^2"]


@pytest.mark.parametrize("src", SMOOTH)
def test_symbolic_matches_finite_differences(src):
    f = expr(src)
    rng = np.random.default_rng(1)
    t = rng.uniform(0.1, 3.0, 1000)
    x = rng.uniform(0.2, 3.0, 1000)
    sym = f.partials(t, x)
    h = 1e-5
    fd = ((f(t + h, x) - f(t - h, x)) / (2 * h),
          (f(t, x + h) - f(t, x - h)) / (2 * h),
          (f(t, x + 1e-3) - 2 * f(t, x) + f(t, x - 1e-3)) / 1e-6)
    for s, d in zip(sym, fd):
        s = np.broadcast_to(s, t.shape)
        assert np.all(np.abs(s - d) <= 1e-4 * np.maximum(1.0, np.abs(s)))


@settings(max_examples=50)
@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_bilinear_reproduces_linear_functions(t, x):
    ts, xs = np.linspace(0, 2, 5), np.linspace(0, 1, 4)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    f = CoefficientField.tabulated(ts, xs, 1 + 2 * T - 3 * X)
    assert float(f(t, x)) == pytest.approx(1 + 2 * t - 3 * x, abs=1e-12)
