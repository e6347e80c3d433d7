"""Verification suites: each suite runs solves, diagnostics and simulations for
one structural result and returns named pass/fail checks."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import catalog as C
from .diagnostics import (check_news_direction, check_single_crossing, classify_environment,
                          compare_problems, controlled_monotonicity_check, corollary2_sign_table,
                          is_convex, is_mc_problem, is_monotone, verify_boundary_monotonicity)
from .problem import Action, StoppingProblem
from .sde import (accuracy_profile, belief_consistency, coupled_stopping_rank, estimate_value_mc,
                  shift_boundary, simulate_stopped)
from .solver import ValueSurface, extract_boundaries, solve

GOLDEN = (1 + math.sqrt(5)) / 2


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        # timings stay out of reports so identical runs give identical files
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


class Context:
    """Run options shared by suites plus a log of every solve's invariant report."""

    def __init__(self, grid: dict | None = None, seed: int = 20240601, paths: float = 1.0):
        self.grid = dict(grid or {})
        self.seed = int(seed)
        self.paths = float(paths)
        self.solves: list = []

    def n(self, default: int) -> int:
        return max(100, int(round(default * self.paths)))

    def model(self, problem: StoppingProblem, min_nx: int | None = None,
              min_nt: int | None = None) -> StoppingProblem:
        g = problem.grid
        kw = {k: v for k, v in self.grid.items() if k in ("nx", "nt")}
        if min_nx and kw.get("nx", g.nx) < min_nx:
            kw["nx"] = min_nx
        if min_nt and kw.get("nt", g.nt) < min_nt:
            kw["nt"] = min_nt
        return replace(problem, grid=replace(g, **kw)) if kw else problem

    def solve(self, problem: StoppingProblem, **kw) -> ValueSurface:
        s = solve(problem, **kw)
        rep = s.invariant_report()
        mc = is_mc_problem(problem)
        mono = problem.meta.get("model") in ("leland", "investment")
        self.solves.append({"model": problem.name, "obstacle_ok": rep["obstacle_ok"],
                            "complementarity_ok": rep["complementarity_ok"],
                            "min_gap": rep["min_gap"], "max_residual": rep["max_residual"],
                            "mc": mc, "convex_ok": is_convex(s) if mc else None,
                            "x_monotone": mono, "monotone_ok": is_monotone(s) if mono else None})
        return s


def _check(checks, name, passed, t0, **detail):
    checks.append(Check(name, bool(passed), detail, round(time.perf_counter() - t0, 3)))


# -- closed-form benchmarks ---------------------------------------------------------------

def suite_put(ctx: Context) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    p = ctx.model(C.build("put_stationary"))
    s = ctx.solve(p)
    b = extract_boundaries(s)
    K, r, sig = 1.0, 0.05, 0.3
    exact = K / (1 + sig ** 2 / (2 * r))
    rel = abs(b.lower[0] - exact) / exact
    _check(checks, "put_threshold_1pct", rel <= 0.01, t0, b=b.lower[0], exact=exact, rel_err=rel)
    x = s.x_nodes
    beta = 2 * r / sig ** 2
    v = np.where(x <= exact, K - x, (K - exact) * (x / exact) ** (-beta))
    err = float(np.max(np.abs(s.values[0] - v)))
    _check(checks, "put_value_supnorm", err <= 5e-3, t0, sup_err=err)
    return checks


def suite_investment(ctx: Context) -> list[Check]:
    checks = []
    for name, exact in (("investment_stationary", 3.0), ("investment_golden", GOLDEN ** 2)):
        t0 = time.perf_counter()
        p = ctx.model(C.build(name))
        b = extract_boundaries(ctx.solve(p))
        rel = abs(b.upper[0] - exact) / exact
        _check(checks, f"{name}_threshold_1pct", rel <= 0.01, t0, b=b.upper[0], exact=exact, rel_err=rel)
    return checks


def suite_wald_stationary(ctx: Context) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    p = ctx.model(C.build("wald_stationary"))
    s = ctx.solve(p, stationary=False)
    b = extract_boundaries(s)
    spread = max(np.ptp(b.lower), np.ptp(b.upper)) / b.cell
    sym = float(np.max(np.abs(b.lower + b.upper - 1.0)))
    _check(checks, "flat_within_one_cell", spread <= 1.0, t0, spread_cells=spread,
           lower=b.lower[0], upper=b.upper[0])
    _check(checks, "symmetric_about_half", sym <= 1e-6, t0, max_asymmetry=sym)
    v = classify_environment(p, s)
    _check(checks, "classified_flat", v.classification == "Flat", t0, classification=v.classification)
    return checks


# -- monotone environments ------------------------------------------------------------------

def _direction(ctx, checks, name, expect, min_nx=None, min_nt=None):
    t0 = time.perf_counter()
    p = ctx.model(C.build(name), min_nx, min_nt)
    s = ctx.solve(p)
    v = controlled_monotonicity_check(s, p) if p.actions else classify_environment(p, s)
    _check(checks, f"{name}_classified_{expect}", v.classification == expect, t0,
           classification=v.classification, vt=[v.vt_min, v.vt_max], integrand=[v.iov_min, v.dov_max])
    b = extract_boundaries(s)
    if v.classification == "Mixed":
        _check(checks, f"{name}_boundaries", False, t0, reason="Mixed classification")
        return p, s, b
    bc = verify_boundary_monotonicity(b, v)
    _check(checks, f"{name}_boundaries", bc.passed, t0, movement_cells=bc.movement,
           census=bc.census[:5])
    return p, s, b


def suite_theorem1(ctx: Context) -> list[Check]:
    checks = []
    _direction(ctx, checks, "wald_rising_cost", "DecreasingStrict", 401, 200)
    _direction(ctx, checks, "wald_rising_intensity", "IncreasingStrict", 401, 200)
    _direction(ctx, checks, "put_sigma_falling", "DecreasingStrict")
    _direction(ctx, checks, "investment_cost_falling", "DecreasingStrict")
    return checks


def suite_nonbinary(ctx: Context, n_paths: int = 100_000) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    p = C.build("nonbinary")
    filt = p.meta["filter"]
    xs = np.linspace(0.1, 0.9, 10)
    ts = np.linspace(0.0, 5.0, 21)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    exact = filt.sigma(T, X)
    tab = p.sigma.table
    cols = np.unique(np.searchsorted(p.sigma.x_nodes, xs))
    ok_exact = bool(np.all(np.diff(exact, axis=0) < 0))
    ok_tab = bool(np.all(np.diff(tab[:, cols], axis=0) < 0))
    _check(checks, "sigma_strictly_decreasing_in_t", ok_exact and ok_tab, t0,
           exact=ok_exact, tabulated=ok_tab, probes=xs)
    p, s, b = _direction(ctx, checks, "nonbinary", "DecreasingStrict")
    t0 = time.perf_counter()
    ens = simulate_stopped(p, b, ctx.n(n_paths), ctx.seed, 1e-3, x0=0.5)
    prof = accuracy_profile(ens, b)
    _check(checks, "accuracy_decreasing", prof.trend["p_decreasing"] < 0.05, t0, trend=prof.trend,
           n=ens.n_paths)
    return checks


# -- comparative statics -------------------------------------------------------------------

def theorem2_pairs(seed: int, n_pairs: int = 20, nx: int = 201, nt: int = 100):
    """Seeded Wald-type pairs: shared mu, sigma; hi has the larger flow and smaller discount."""
    gen = np.random.default_rng(seed)
    grid = C.GridSpec(nt=nt, nx=nx, spacing="uniform", t_window=5.0)
    pairs = []
    for j in range(n_pairs):
        i = float(np.round(gen.uniform(0.6, 1.4), 3))
        a, bb = (float(np.round(v, 3)) for v in gen.uniform(0.7, 1.3, 2))
        r_small, r_big = sorted(float(np.round(v, 4)) for v in gen.uniform(0.02, 0.2, 2))
        c_small, c_big = sorted(float(np.round(v, 4)) for v in gen.uniform(0.005, 0.05, 2))
        slope = float(np.round(gen.uniform(0.0, 0.01), 4)) if j % 2 else 0.0
        cost = (lambda c: f"{c} + {slope}*t") if slope else (lambda c: f"{c}")
        # lo pays the higher cost (lower flow) and discounts more
        lo = C.make_wald(a, bb, r_big, str(i), "1", cost(c_big), grid=grid, name=f"pair{j}_lo")
        hi = C.make_wald(a, bb, r_small, str(i), "1", cost(c_small), grid=grid, name=f"pair{j}_hi")
        pairs.append((lo, hi))
    return pairs


def suite_theorem2(ctx: Context, n_pairs: int = 20, n_paths: int = 10_000) -> list[Check]:
    checks = []
    nx = int(ctx.grid.get("nx", 201))
    nt = int(ctx.grid.get("nt", 100))
    for j, (lo, hi) in enumerate(theorem2_pairs(ctx.seed, n_pairs, nx, nt)):
        t0 = time.perf_counter()
        s_lo, s_hi = ctx.solve(lo), ctx.solve(hi)
        rep = compare_problems(lo, hi, "flow_discount", surfaces=(s_lo, s_hi))
        b_lo, b_hi = extract_boundaries(s_lo), extract_boundaries(s_hi)
        rank = coupled_stopping_rank(lo, hi, b_lo, b_hi, ctx.n(n_paths), ctx.seed + j, 1e-3, 0.5)
        _check(checks, f"pair{j:02d}", rep.passed and rank["passed"], t0,
               dominance=rep.value_dominance, inclusion=rep.region_inclusion,
               tau_violations=rank["violations"], mean_tau=[rank["mean_tau_lo"], rank["mean_tau_hi"]])
    return checks


def suite_theorem3(ctx: Context) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    lo, hi = ctx.model(C.build("put_sigma_low")), ctx.model(C.build("put_sigma_high"))
    s = (ctx.solve(lo), ctx.solve(hi))
    rep = compare_problems(lo, hi, "volatility", surfaces=s)
    b_lo, b_hi = rep.details["boundary_lo_t0"][0], rep.details["boundary_hi_t0"][0]
    _check(checks, "put_volatility_pair", rep.passed and rep.hypothesis_check == "convex", t0,
           hypothesis=rep.hypothesis_check, dominance=rep.value_dominance,
           inclusion=rep.region_inclusion)
    # the put threshold falls as volatility rises
    _check(checks, "put_threshold_order", b_hi < b_lo, t0, b_sigma_low=b_lo, b_sigma_high=b_hi)
    t0 = time.perf_counter()
    lo = ctx.model(C.make_investment(mu=0.01, sigma=0.2, r=0.06, I=1.0, name="investment_mu_low"))
    hi = ctx.model(C.make_investment(mu=0.03, sigma=0.2, r=0.06, I=1.0, name="investment_mu_high"))
    s = (ctx.solve(lo), ctx.solve(hi))
    rep = compare_problems(lo, hi, "drift", surfaces=s)
    b_lo, b_hi = rep.details["boundary_lo_t0"][1], rep.details["boundary_hi_t0"][1]
    _check(checks, "investment_drift_pair", rep.passed and rep.hypothesis_check == "increasing", t0,
           hypothesis=rep.hypothesis_check, dominance=rep.value_dominance,
           inclusion=rep.region_inclusion)
    # the investment threshold rises with drift
    _check(checks, "investment_threshold_order", b_hi > b_lo, t0, b_mu_low=b_lo, b_mu_high=b_hi)
    return checks


# -- deadlines -------------------------------------------------------------------------------

def suite_deadline(ctx: Context) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    base = C.make_wald(r=0.1)
    moved = C.apply_deadline(base, C.DeadlineSpec(0.3, 0.0))
    direct = C.make_wald(r=0.4)
    g = np.linspace(0.0, 5.0, 11)[:, None], np.linspace(0.01, 0.99, 99)[None, :]
    same = all(np.array_equal(np.broadcast_to(moved.coeff(k)(*g), (11, 99)),
                              np.broadcast_to(direct.coeff(k)(*g), (11, 99)))
               for k in ("mu", "sigma", "flow", "discount"))
    _check(checks, "constant_rate_zero_payoff_exact", same, t0,
           discount=moved.discount.source(), flow=moved.flow.source())
    for name in ("deadline_forced", "deadline_revelation"):
        p, s, b = _direction(ctx, checks, name, "DecreasingStrict")
        t0 = time.perf_counter()
        news = check_news_direction(p, s)
        _check(checks, f"{name}_news_direction", news["match"], t0, **news)
    return checks


# -- invariants ------------------------------------------------------------------------------

def suite_invariants(ctx: Context, records: list | None = None) -> list[Check]:
    """Discrete invariants on recorded solves; solves the catalog when nothing is recorded."""
    checks = []
    if records is None:
        sub = Context(ctx.grid, ctx.seed, ctx.paths)
        for name in C.names():
            p = sub.model(C.build(name))
            sub.solve(p)
        records = sub.solves
    t0 = time.perf_counter()
    bad = [r["model"] for r in records if not (r["obstacle_ok"] and r["complementarity_ok"])]
    _check(checks, "complementarity_and_obstacle", not bad, t0, solves=len(records), failing=bad)
    t0 = time.perf_counter()
    mc = [r for r in records if r["mc"]]
    bad = [r["model"] for r in mc if not r["convex_ok"]]
    _check(checks, "convexity_on_mc_problems", not bad and bool(mc), t0, solves=len(mc), failing=bad)
    t0 = time.perf_counter()
    mono = [r for r in records if r["x_monotone"]]
    bad = [r["model"] for r in mono if not r["monotone_ok"]]
    _check(checks, "x_monotone_leland_investment", not bad and bool(mono), t0, solves=len(mono),
           failing=bad)
    return checks


# -- Monte Carlo ------------------------------------------------------------------------------

def suite_mc(ctx: Context, n_paths: int = 10_000) -> list[Check]:
    checks = []
    n = ctx.n(n_paths)
    for name, x0, dt in (("put_stationary", 1.0, 5e-3), ("wald_stationary", 0.5, 1e-3)):
        t0 = time.perf_counter()
        p = ctx.model(C.build(name))
        s = ctx.solve(p)
        b = extract_boundaries(s)
        v = float(np.interp(x0, s.x_nodes, s.values[0]))
        opt = estimate_value_mc(p, b, n, ctx.seed, dt, x0=x0)
        slack = 3 * opt["se"] + 5e-3 * s.scale
        _check(checks, f"{name}_optimal_rule", abs(opt["mean"] - v) <= slack, t0,
               mc=opt["mean"], se=opt["se"], pde=v, slack=slack)
        t0 = time.perf_counter()
        sub = estimate_value_mc(p, shift_boundary(b, 0.1), n, ctx.seed, dt, x0=x0)
        _check(checks, f"{name}_suboptimal_below", v - sub["mean"] > 3 * sub["se"], t0,
               mc=sub["mean"], se=sub["se"], pde=v)
    t0 = time.perf_counter()
    rep = belief_consistency(C.build("wald_stationary"), ctx.n(10_000), 1e-4, 1.0, ctx.seed)
    _check(checks, "belief_sde_vs_exact_filter_ks", rep["ks"] < 0.02, t0, **rep)
    return checks


# -- controlled overlay -----------------------------------------------------------------------

def suite_controlled(ctx: Context) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    base = ctx.model(C.build("wald_rising_cost"))
    single = replace(base, actions=(Action("only", base.mu, base.sigma, base.flow, base.discount),),
                     name="wald_single_action")
    s1, s2 = ctx.solve(base), ctx.solve(single, stationary=False)
    diff = float(np.max(np.abs(s1.values - s2.values)))
    _check(checks, "singleton_action_equivalence", diff <= 1e-12, t0, max_diff=diff)
    t0 = time.perf_counter()
    menu = ctx.model(C.build("wald_menu"))
    sm = ctx.solve(menu)
    kappa, c = 0.05, 0.02
    fixed = [ctx.solve(C.make_wald(i=str(i), c=f"{c} + {kappa}*{i * i}", grid=menu.grid,
                                   name=f"wald_i{i}")) for i in (0.5, 1.0)]
    # best signal at the cheapest cost bounds the menu from above (V is convex)
    upper = ctx.solve(C.make_wald(i="1.0", c=f"{c} + {kappa}*0.25", grid=menu.grid, name="wald_upper"))
    tol = 1e-9 * sm.scale
    lo_gap = float((sm.values - np.maximum(fixed[0].values, fixed[1].values)).min())
    hi_gap = float((upper.values - sm.values).min())
    _check(checks, "menu_sandwich", lo_gap >= -tol and hi_gap >= -tol, t0, lower_gap=lo_gap,
           upper_gap=hi_gap)
    _direction(ctx, checks, "wald_menu_rising_cost", "DecreasingStrict")
    _direction(ctx, checks, "wald_menu_falling_zeta", "IncreasingStrict")
    return checks


# -- boundary continuity ---------------------------------------------------------------------

def suite_continuity(ctx: Context, nts=(200, 400, 800)) -> list[Check]:
    checks = []
    t0 = time.perf_counter()
    p = C.build("wald_rising_cost")
    sc = check_single_crossing(p)
    _check(checks, "ssc_holds", sc.verdict_ssc, t0)
    jumps = {}
    for nt in nts:
        q = replace(p, grid=replace(p.grid, nt=nt, **{k: v for k, v in ctx.grid.items() if k == "nx"}))
        b = extract_boundaries(ctx.solve(q))
        jumps[nt] = b.max_jump / b.cell
    ref = 400 if 400 in jumps else nts[len(nts) // 2]
    seq = [jumps[nt] for nt in sorted(jumps)]
    _check(checks, "max_jump_at_most_3_cells", jumps[ref] <= 3.0, t0, jumps_cells=jumps)
    _check(checks, "jump_decreases_under_refinement", all(np.diff(seq) < 0), t0, jumps_cells=jumps)
    return checks


# -- structure -------------------------------------------------------------------------------

SC_CLAIMS = ("wald_stationary", "wald_rising_cost", "put_stationary", "investment_stationary",
             "nonbinary", "deadline_forced")


def suite_single_crossing(ctx: Context) -> list[Check]:
    checks = []
    for name in SC_CLAIMS:
        t0 = time.perf_counter()
        prof = check_single_crossing(ctx.model(C.build(name)))
        _check(checks, f"{name}_sc", prof.verdict_sc, t0, ssc=prof.verdict_ssc,
               failures=prof.failures[:3])
    return checks


def suite_corollary2(ctx: Context) -> list[Check]:
    checks = []
    for name in ("put_sigma_falling", "investment_cost_falling", "put_stationary"):
        t0 = time.perf_counter()
        tab = corollary2_sign_table(ctx.model(C.build(name)))
        _check(checks, name, tab.get("prediction") is not None and tab.get("verified", False), t0,
               signs=tab["signs"], prediction=tab["prediction"], note=tab["note"])
    return checks


SUITES = {
    "put": (suite_put, "perpetual put threshold and value against the closed form"),
    "investment": (suite_investment, "investment thresholds against the closed form"),
    "wald_stationary": (suite_wald_stationary, "flat symmetric boundaries of the stationary Wald model"),
    "theorem1": (suite_theorem1, "monotone environments and boundary directions"),
    "nonbinary": (suite_nonbinary, "finite-support prior: sigma, boundaries, accuracy"),
    "theorem2": (suite_theorem2, "flow/discount comparative statics on seeded pairs"),
    "theorem3": (suite_theorem3, "volatility and drift comparative statics"),
    "deadline": (suite_deadline, "Poisson deadline transformation and directions"),
    "invariants": (suite_invariants, "complementarity, convexity and x-monotonicity"),
    "mc": (suite_mc, "Monte Carlo against PDE values"),
    "controlled": (suite_controlled, "controlled overlay"),
    "continuity": (suite_continuity, "boundary continuity under time refinement"),
    "single_crossing": (suite_single_crossing, "condition SC on catalog models"),
    "corollary2": (suite_corollary2, "sign table predictions for Brownian models"),
}


def run_suite(name: str, ctx: Context | None = None) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite '{name}'")
    ctx = ctx or Context()
    return SUITES[name][0](ctx)


def run_all(ctx: Context | None = None) -> dict[str, list[Check]]:
    ctx = ctx or Context()
    out = {}
    for name in SUITES:
        if name == "invariants":
            continue
        out[name] = run_suite(name, ctx)
    out["invariants"] = suite_invariants(ctx, ctx.solves)
    return out
