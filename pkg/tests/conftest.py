import math

import pytest

from stopflow.config import from_dict


def doc(mu="0", sigma="0.3", flow="0", discount="0.1", a="x", b="1 - x", lower=0.0, upper=1.0,
        horizon=1.0, nx=41, nt=20, **extra):
    d = {"domain": {"lower": lower, "upper": upper}, "horizon": horizon,
         "coefficients": {"mu": mu, "sigma": sigma, "flow": flow, "discount": discount},
         "payoff": {"branch_a": a, "branch_b": b}, "grid": {"nx": nx, "nt": nt}}
    d.update(extra)
    return d


def problem(**kw):
    return from_dict(doc(**kw))


@pytest.fixture
def make_problem():
    return problem


@pytest.fixture
def make_doc():
    return doc


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
