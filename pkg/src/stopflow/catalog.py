"""Application models: learning (Wald, non-binary prior, deadlines), real
options (investment, American put) and endogenous default (Leland).

Every factory returns a validated :class:`StoppingProblem`; model metadata
(closed-form oracles, transformation records, filters) lives in ``meta``.
Coefficients given as numbers or expression strings in ``t`` are spliced into
expression text, so printed configs stay human-readable and round-trip exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .fields import CoefficientField
from .problem import (Action, GridSpec, ProblemError, StoppingPayoff, StoppingProblem,
                      make_grid, validate)


class CatalogError(ValueError):
    pass


def _txt(v) -> str:
    """Expression text for a number or expression string."""
    if isinstance(v, CoefficientField):
        if v.kind == "constant":
            return repr(v.value)
        if v.kind == "expression":
            return v.expr.source
        raise CatalogError("tabulated fields cannot be spliced into expressions")
    if isinstance(v, (int, float)):
        return repr(float(v))
    return str(v)


def _par(v) -> str:
    s = _txt(v)
    try:
        float(s)
        return s if not s.startswith("-") else f"({s})"
    except ValueError:
        return f"({s})"


def _sample(v, ts, x=0.5):
    return np.asarray(CoefficientField.coerce(v)(np.asarray(ts, dtype=float), x), dtype=float) \
        * np.ones(len(ts))


# -- learning models -------------------------------------------------------------

def make_wald(a: float = 1.0, b: float = 1.0, r: float = 0.1, i="1", zeta="1", c="0.02",
              horizon: float | None = None, grid: GridSpec | None = None,
              name: str = "wald") -> StoppingProblem:
    """Binary-state information acquisition: belief X in (0, 1), mu = 0,
    sigma = 2 i(t)/zeta(t) x(1 - x), flow -c(t), payoff max(a x, b(1 - x))."""
    if a < 0 or b < 0 or a + b <= 0:
        raise CatalogError("payoff weights must satisfy a, b >= 0, a + b > 0")
    if r < 0:
        raise CatalogError("discount must be nonnegative")
    grid = grid or GridSpec(nt=200, nx=401, spacing="uniform", t_window=5.0)
    tt = np.linspace(0.0, horizon or grid.t_window or 10.0, 101)
    if np.any(_sample(i, tt) <= 0) or np.any(_sample(zeta, tt) <= 0):
        raise CatalogError("signal intensity and noise must be positive")
    if r == 0 and not np.all(_sample(c, tt[-10:]) > 0):
        raise CatalogError("r = 0 needs a cost bounded away from zero eventually")
    sigma = f"2*{_par(i)}/{_par(zeta)}*x*(1-x)"
    prob = StoppingProblem(
        (0.0, 1.0), horizon,
        mu=CoefficientField.constant(0.0),
        sigma=CoefficientField.expression(sigma),
        flow=CoefficientField.expression(f"-{_par(c)}"),
        discount=CoefficientField.constant(r),
        payoff=StoppingPayoff(CoefficientField.expression(f"{float(a)!r}*x"),
                              CoefficientField.expression(f"{float(b)!r}*(1-x)"), b / (a + b)),
        grid=grid, name=name,
        meta={"model": "wald", "a": a, "b": b, "r": r, "i": _txt(i), "zeta": _txt(zeta),
              "c": _txt(c), "learning": "binary"})
    return validate(prob)


@dataclass(frozen=True)
class FiniteSupportPrior:
    theta: tuple
    p: tuple
    zeta: float = 1.0

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if th.shape != p.shape or th.size < 2:
            raise CatalogError("prior needs matching support and weights (>= 2 points)")
        if np.any(np.diff(th) <= 0):
            raise CatalogError("support must be strictly increasing")
        if np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
            raise CatalogError("weights must be positive and sum to 1")
        if not (np.any(th >= 0) and np.any(th < 0)):
            raise CatalogError("support must have points on both sides of 0 (decision trivial)")
        if not self.zeta > 0:
            raise CatalogError("noise scale must be positive")


class ExactFilter:
    """Posterior over a finite support from the signal Z_t = i theta t + zeta B_t.

    The statistic z = Z_t (constant i, zeta) indexes posteriors:
    w_k(t, z) ~ p_k exp(i theta_k z / zeta^2 - i^2 theta_k^2 t / (2 zeta^2)).
    """

    def __init__(self, prior: FiniteSupportPrior, i: float = 1.0):
        self.prior = prior
        self.theta = np.asarray(prior.theta, dtype=float)
        self.logp = np.log(np.asarray(prior.p, dtype=float))
        self.pos = self.theta >= 0
        self.i = float(i)
        self.zeta = float(prior.zeta)

    def log_weights(self, t, z):
        t = np.asarray(t, dtype=float)[..., None]
        z = np.asarray(z, dtype=float)[..., None]
        k = self.i / self.zeta ** 2
        lw = self.logp + k * self.theta * z - 0.5 * k * self.i * self.theta ** 2 * t
        return lw - logsumexp(lw, axis=-1, keepdims=True)

    def weights(self, t, z):
        return np.exp(self.log_weights(t, z))

    def belief(self, t, z):
        lw = self.log_weights(t, z)
        return np.exp(logsumexp(lw[..., self.pos], axis=-1))

    def z_of(self, t, x, iters: int = 200):
        """Invert z -> X(t, z) by vectorized bisection (X is increasing in z)."""
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        if np.any((x <= 0) | (x >= 1)):
            raise CatalogError("belief must lie in (0, 1) for inversion")
        lo = np.full(x.shape, -1.0)
        hi = np.full(x.shape, 1.0)
        for _ in range(200):
            bad = self.belief(t, lo) > x
            if not bad.any():
                break
            lo = np.where(bad, 2 * lo, lo)
        for _ in range(200):
            bad = self.belief(t, hi) < x
            if not bad.any():
                break
            hi = np.where(bad, 2 * hi, hi)
        if np.any(self.belief(t, lo) > x) or np.any(self.belief(t, hi) < x):
            raise CatalogError(f"bisection bracket failed ([{lo.min()}, {hi.max()}])")
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            up = self.belief(t, mid) < x
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def sigma_z(self, t, z):
        w = self.weights(t, z)
        mean = w @ self.theta
        x = w[..., self.pos].sum(axis=-1)
        cov = w[..., self.pos] @ self.theta[self.pos] - mean * x
        return self.i / self.zeta * cov

    def sigma(self, t, x):
        return self.sigma_z(t, self.z_of(t, x))


def make_nonbinary(prior: FiniteSupportPrior, a: float = 1.0, b: float = 1.0, r: float = 0.1,
                   c: float = 0.02, i: float = 1.0, horizon: float | None = None,
                   grid: GridSpec | None = None, name: str = "nonbinary") -> StoppingProblem:
    """Learning the sign of theta under a finite-support prior.

    sigma(t, x) comes from the exact filter and is tabulated on the solver grid;
    the filter itself is kept in ``meta['filter']`` for simulation.
    """
    if r < 0 or not c > 0:
        raise CatalogError("need r >= 0 and c > 0")
    filt = ExactFilter(prior, i)
    grid = grid or GridSpec(nt=200, nx=401, spacing="uniform", t_window=5.0)
    base = StoppingProblem(
        (0.0, 1.0), horizon, mu=CoefficientField.constant(0.0),
        sigma=CoefficientField.constant(1.0),
        flow=CoefficientField.constant(-float(c)), discount=CoefficientField.constant(r),
        payoff=StoppingPayoff(CoefficientField.expression(f"{float(a)!r}*x"),
                              CoefficientField.expression(f"{float(b)!r}*(1-x)"), b / (a + b)),
        grid=grid, name=name)
    g = make_grid(base)
    T, X = np.meshgrid(g.t_nodes, g.x_nodes, indexing="ij")
    tab = filt.sigma(T, X)
    sigma = CoefficientField.tabulated(g.t_nodes, g.x_nodes, tab)
    meta = {"model": "nonbinary", "theta": list(prior.theta), "p": list(prior.p),
            "zeta": prior.zeta, "i": i, "a": a, "b": b, "r": r, "c": c,
            "learning": "finite_support", "filter": filt}
    return validate(replace(base, sigma=sigma, meta=meta))


@dataclass(frozen=True)
class DeadlineSpec:
    alpha: object          # rate field alpha(t, x) >= 0
    gamma: object          # termination payoff gamma(x)
    news_direction: str = "unknown"   # good | bad | unknown


def apply_deadline(base: StoppingProblem, spec: DeadlineSpec, name: str | None = None) -> StoppingProblem:
    """Poisson termination at rate alpha paying gamma: discount r + alpha, flow f + alpha gamma."""
    if base.discount.kind != "constant":
        raise CatalogError("deadline transformation needs a scalar base discount")
    if spec.news_direction not in ("good", "bad", "unknown"):
        raise CatalogError("news_direction must be good, bad or unknown")
    alpha = CoefficientField.coerce(spec.alpha)
    gamma = CoefficientField.coerce(spec.gamma)
    meta = dict(base.meta)
    meta["deadline"] = {"alpha": _txt(alpha), "gamma": _txt(gamma),
                        "news_direction": spec.news_direction, "base_discount": base.discount.value,
                        "base_flow": _txt(base.flow)}
    if alpha.kind == "constant" and alpha.value == 0.0:
        return replace(base, meta=meta, name=name or base.name)
    if alpha.kind == "constant":
        disc = CoefficientField.constant(base.discount.value + alpha.value)
    else:
        disc = CoefficientField.expression(f"{_par(base.discount)} + {_par(alpha)}")
    if gamma.kind == "constant" and gamma.value == 0.0:
        flow = base.flow
    else:
        flow = CoefficientField.expression(f"{_par(base.flow)} + {_par(alpha)}*{_par(gamma)}")
    prob = replace(base, discount=disc, flow=flow, meta=meta, name=name or base.name)
    try:
        return validate(prob)
    except ProblemError as exc:
        raise CatalogError(str(exc)) from None


# -- Brownian-motion models ------------------------------------------------------

def _gbm_grid(x_min, x_max, nx=1600, nt=200, t_window=None, x0=None) -> GridSpec:
    return GridSpec(nt=nt, nx=nx, spacing="log", x_min=x_min, x_max=x_max, t_window=t_window, x0=x0)


def make_put(K: float = 1.0, r="0.05", sigma="0.3", horizon: float | None = None,
             grid: GridSpec | None = None, name: str = "put") -> StoppingProblem:
    """American put under the risk-neutral gBM dX = r(t) X dt + sigma(t) X dW."""
    if not K > 0:
        raise CatalogError("strike must be positive (K = 0 is an empty payoff)")
    tt = np.linspace(0.0, horizon or 10.0, 101)
    if np.any(_sample(r, tt) <= 0):
        raise CatalogError("put needs r > 0")
    grid = grid or _gbm_grid(0.02 * K, 200.0 * K)
    prob = StoppingProblem(
        (0.0, math.inf), horizon,
        mu=CoefficientField.expression(f"{_par(r)}*x"),
        sigma=CoefficientField.expression(f"{_par(sigma)}*x"),
        flow=CoefficientField.constant(0.0),
        discount=CoefficientField.coerce(r),
        payoff=StoppingPayoff(CoefficientField.expression(f"{float(K)!r} - x"),
                              CoefficientField.constant(0.0), float(K)),
        grid=grid, name=name,
        meta={"model": "put", "K": K, "r": _txt(r), "sigma": _txt(sigma)})
    return validate(prob)


def put_threshold(K: float, r: float, sigma: float) -> float:
    return K / (1 + sigma ** 2 / (2 * r))


def put_value(x, K: float, r: float, sigma: float):
    b = put_threshold(K, r, sigma)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        cont = (K - b) * (x / b) ** (-2 * r / sigma ** 2)
    return np.where(x > b, cont, K - x)


def make_investment(mu="0.03", sigma="0.2", r="0.06", I="1", horizon: float | None = None,
                    grid: GridSpec | None = None, name: str = "investment") -> StoppingProblem:
    """Irreversible investment: gBM project value, payoff (x - I(t))^+."""
    T = horizon or 10.0
    tt = np.linspace(0.0, T, 101)
    if not np.max(_sample(mu, tt)) < np.min(_sample(r, tt)) - 1e-9:
        raise CatalogError("well-posedness needs sup mu < inf r")
    I0 = float(_sample(I, [0.0])[0])
    grid = grid or _gbm_grid(0.01 * I0, 40.0 * I0)
    prob = StoppingProblem(
        (0.0, math.inf), horizon,
        mu=CoefficientField.expression(f"{_par(mu)}*x"),
        sigma=CoefficientField.expression(f"{_par(sigma)}*x"),
        flow=CoefficientField.constant(0.0),
        discount=CoefficientField.coerce(r),
        payoff=StoppingPayoff(CoefficientField.expression(f"x - {_par(I)}"),
                              CoefficientField.constant(0.0), I0),
        grid=grid, name=name,
        meta={"model": "investment", "mu": _txt(mu), "sigma": _txt(sigma), "r": _txt(r), "I": _txt(I)})
    return validate(prob)


def investment_kappa(mu: float, sigma: float, r: float) -> float:
    """Positive root of 1/2 s^2 k(k - 1) + mu k - r = 0."""
    m = mu - sigma ** 2 / 2
    return (math.sqrt(m * m + 2 * sigma ** 2 * r) - m) / sigma ** 2


def investment_threshold(mu: float, sigma: float, r: float, I: float = 1.0) -> float:
    k = investment_kappa(mu, sigma, r)
    return I / (1 - 1 / k)


def leland_kappa(mu: float, sigma: float, r: float) -> float:
    """Positive root of 1/2 s^2 k(k + 1) - mu k - r = 0 (decaying solution x^-k)."""
    m = mu - sigma ** 2 / 2
    return (m + math.sqrt(m * m + 2 * r * sigma ** 2)) / sigma ** 2


def leland_threshold(delta: float, c: float, mu: float, sigma: float, r: float) -> float:
    k = leland_kappa(mu, sigma, r)
    return k / (k + 1) * (1 - mu / r) * c / delta


def make_leland(delta="0.06", c="0.03", r: float = 0.05, mu="0.01", sigma="0.25", G: float = 0.0,
                horizon: float | None = None, grid: GridSpec | None = None,
                name: str = "leland") -> StoppingProblem:
    """Equity holders' default timing.  Cash flow delta(x) x - c(x), default pays G <= 0.

    Solved as U = V - G: flow delta x - c - r G, stopping payoff 0.  The upper
    edge is pinned to the never-default value of U instead of g = 0.
    """
    if G > 0:
        raise CatalogError("default penalty G must be <= 0")
    xs = np.geomspace(1e-3, 1e3, 400)
    cash = CoefficientField.expression(f"{_par(delta)}*x - {_par(c)}")
    T = horizon or 10.0
    for t in np.linspace(0.0, T, 5):
        if np.any(np.diff(np.asarray(cash(t, xs)) * np.ones_like(xs)) < 0):
            raise CatalogError("delta(x) x - c(x) must be nondecreasing in x")
    if not np.max(_sample(mu, np.linspace(0, T, 51))) < r:
        raise CatalogError("need mu < r")
    grid = grid or _gbm_grid(0.01, 1e4, nx=1600)
    flow = f"{_par(delta)}*x - {_par(c)}" + (f" + {float(-r * G)!r}" if G != 0 else "")
    # never-default value of U for constant coefficients; a far-field Dirichlet value
    upper = f"{_par(delta)}*x/({float(r)!r} - {_par(mu)}) - {_par(c)}/{float(r)!r} - {_par(G)}"
    prob = StoppingProblem(
        (0.0, math.inf), horizon,
        mu=CoefficientField.expression(f"{_par(mu)}*x"),
        sigma=CoefficientField.expression(f"{_par(sigma)}*x"),
        flow=CoefficientField.expression(flow),
        discount=CoefficientField.constant(r),
        payoff=StoppingPayoff(CoefficientField.constant(0.0), CoefficientField.constant(0.0), 1.0),
        grid=grid, name=name, closure=(None, CoefficientField.expression(upper)),
        meta={"model": "leland", "delta": _txt(delta), "c": _txt(c), "r": r, "mu": _txt(mu),
              "sigma": _txt(sigma), "G": G, "shift": G})
    return validate(prob)


# -- controlled learning ------------------------------------------------------------

def make_wald_intensity_menu(intensities=(0.5, 1.0), kappa="0.05", zeta="1", c="0.02",
                             r: float = 0.1, a: float = 1.0, b: float = 1.0,
                             horizon: float | None = None, grid: GridSpec | None = None,
                             name: str = "wald_menu") -> StoppingProblem:
    """Wald learning where the DM picks a signal intensity i from a menu at cost kappa(t) i^2."""
    base = make_wald(a, b, r, "1", zeta, c, horizon, grid, name)
    acts = []
    for i in intensities:
        acts.append(Action(
            f"i={float(i):g}", base.mu,
            CoefficientField.expression(f"2*{float(i)!r}/{_par(zeta)}*x*(1-x)"),
            CoefficientField.expression(f"-{_par(c)} - {_par(kappa)}*{float(i) ** 2!r}"),
            base.discount))
    meta = dict(base.meta, model="wald_menu", intensities=list(intensities), kappa=_txt(kappa))
    return validate(replace(base, actions=tuple(acts), meta=meta))


# -- named instances ------------------------------------------------------------------

def _wald_grid(nx=401, nt=200, window=5.0):
    return GridSpec(nt=nt, nx=nx, spacing="uniform", t_window=window)


NAMED: dict[str, tuple[Callable, dict, str]] = {
    "put_stationary": (make_put, dict(K=1.0, r=0.05, sigma=0.3),
                       "perpetual American put, r=0.05, sigma=0.3, K=1"),
    "put_sigma_low": (make_put, dict(K=1.0, r=0.05, sigma=0.2), "perpetual put, sigma=0.2"),
    "put_sigma_high": (make_put, dict(K=1.0, r=0.05, sigma=0.4), "perpetual put, sigma=0.4"),
    "put_sigma_falling": (make_put, dict(K=1.0, r=0.05, sigma="0.3*(1 - 0.05*t)", horizon=10.0,
                                         grid=_gbm_grid(0.02, 200.0, nx=800, nt=400)),
                          "finite-horizon put with sigma(t) = 0.3(1 - 0.05 t), T = 10"),
    "investment_stationary": (make_investment, dict(mu=0.03, sigma=0.2, r=0.06, I=1.0),
                              "perpetual investment, mu=0.03, sigma=0.2, r=0.06, I=1"),
    "investment_golden": (make_investment, dict(mu=0.0, sigma=0.2, r=0.02, I=1.0),
                          "perpetual investment, mu=0, sigma=0.2, r=0.02 (threshold phi^2)"),
    "investment_cost_falling": (make_investment, dict(mu=0.03, sigma=0.2, r=0.06, I="1 - 0.02*t",
                                                      horizon=10.0,
                                                      grid=_gbm_grid(0.01, 40.0, nx=800, nt=400)),
                                "finite-horizon investment with I(t) = 1 - 0.02 t, T = 10"),
    "wald_stationary": (make_wald, dict(a=1.0, b=1.0, r=0.1, i=1, zeta=1, c=0.02, grid=_wald_grid()),
                        "stationary binary Wald, c=0.02, r=0.1"),
    "wald_rising_cost": (make_wald, dict(a=1.0, b=1.0, r=0.1, i=1, zeta=1, c="0.01 + 0.02*t",
                                         grid=_wald_grid()),
                         "Wald with cost c(t) = 0.01 + 0.02 t"),
    "wald_rising_intensity": (make_wald, dict(a=1.0, b=1.0, r=0.1, i="1 + t", zeta=1, c=0.02,
                                              grid=_wald_grid()),
                              "Wald with intensity i(t) = 1 + t"),
    "nonbinary": (make_nonbinary, dict(prior=FiniteSupportPrior((-1.0, 0.1, 1.0), (0.4, 0.2, 0.4), 1.0),
                                       a=1.0, b=1.0, r=0.1, c=0.02, grid=_wald_grid()),
                  "3-point prior theta in {-1, 0.1, 1}, weights (0.4, 0.2, 0.4)"),
    "leland": (make_leland, dict(delta=0.06, c=0.03, r=0.05, mu=0.01, sigma=0.25, G=0.0),
               "Leland default, delta=0.06, c=0.03, mu=0.01, sigma=0.25, r=0.05, G=0"),
    "wald_menu": (make_wald_intensity_menu, dict(grid=_wald_grid()),
                  "Wald with intensity menu {0.5, 1}, cost 0.05 i^2"),
    "wald_menu_rising_cost": (make_wald_intensity_menu, dict(kappa="0.05*(1 + t)", grid=_wald_grid()),
                              "intensity menu with cost 0.05(1 + t) i^2"),
    "wald_menu_falling_zeta": (make_wald_intensity_menu, dict(zeta="1/(1 + 0.2*t)", grid=_wald_grid()),
                               "intensity menu with noise zeta(t) = 1/(1 + 0.2 t)"),
}


def _deadline_forced(**kw):
    base = make_wald(1.0, 1.0, 0.1, 1, 1, 0.02, grid=_wald_grid())
    return apply_deadline(base, DeadlineSpec("0.5 + 0.1*t", "max(1.0*x, 1.0*(1-x))", "bad"),
                          name="deadline_forced")


def _deadline_revelation(**kw):
    base = make_wald(1.0, 1.0, 0.1, 1, 1, 0.02, grid=_wald_grid(nx=801, nt=400, window=10.0))
    return apply_deadline(base, DeadlineSpec("0.5 - 0.02*min(t, 20)", "1.0*x + 1.0*(1-x)", "good"),
                          name="deadline_revelation")


NAMED["deadline_forced"] = (_deadline_forced, {}, "Wald with forced decision at Poisson rate 0.5 + 0.1 t")
NAMED["deadline_revelation"] = (_deadline_revelation, {},
                                "Wald with perfect revelation at Poisson rate 0.5 - 0.02 t")


def names() -> list[str]:
    return sorted(NAMED)


def build(name: str, **overrides) -> StoppingProblem:
    if name not in NAMED:
        raise CatalogError(f"unknown catalog model '{name}'")
    factory, params, _ = NAMED[name]
    kw = dict(params)
    kw.update(overrides)
    if "prior" in kw and isinstance(kw["prior"], dict):
        kw["prior"] = FiniteSupportPrior(tuple(kw["prior"]["theta"]), tuple(kw["prior"]["p"]),
                                         kw["prior"].get("zeta", 1.0))
    if "grid" in kw and isinstance(kw["grid"], dict):
        kw["grid"] = GridSpec(**kw["grid"])
    return replace(factory(**kw), name=name)


def describe(name: str) -> str:
    return NAMED[name][2]
