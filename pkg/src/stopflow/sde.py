"""Monte Carlo for stopped diffusions.

Euler-Maruyama paths (or exact filtering for the learning models), stopping
rules read off extracted boundaries with linear-interpolated crossings,
trapezoidal discounting, Poisson deadlines by thinning, coupled rule pairs on a
common path, and decision-accuracy profiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from . import rng
from .fields import CoefficientField
from .problem import StoppingProblem
from .solver import FreeBoundary

TRUNCATION_DISCOUNT = 1e-3   # perpetual runs stop once the discount factor falls below this
CHUNK = 64                   # normals drawn per refill (multiple of 4)
SCHEMES = ("euler_maruyama", "exact_filter")


class SimulationError(ValueError):
    pass


def fsum_mean_se(v: np.ndarray) -> tuple[float, float]:
    """Order-independent mean and standard error (two-pass, fsum)."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    if n == 0:
        return float("nan"), float("nan")
    m = math.fsum(v) / n
    if n == 1:
        return m, 0.0
    var = math.fsum((v - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


@dataclass
class PathEnsemble:
    seed: int
    n_paths: int
    dt_sim: float
    x0: float
    t0: float
    scheme: str
    path_id: np.ndarray
    tau: np.ndarray
    x_tau: np.ndarray
    payoff: np.ndarray        # realized discounted payoff incl. flow
    alternative: np.ndarray   # 1 a-branch, 0 b-branch, -1 deadline termination
    deadline_hit: np.ndarray
    censored: np.ndarray      # left the truncated numeric domain before stopping
    truncated: np.ndarray     # stopped by the simulation cut-off of a perpetual run
    truth: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def value(self) -> tuple[float, float]:
        return fsum_mean_se(self.payoff)


# -- rules ---------------------------------------------------------------------------

class _Band:
    """Continuation band (lo, hi) at time t from a FreeBoundary; linear in t
    between layers, held constant past the last layer."""

    def __init__(self, boundary: FreeBoundary):
        self.t = np.asarray(boundary.t_nodes, dtype=float)
        lo = np.where(np.isfinite(boundary.lower), boundary.lower, -np.inf)
        hi = np.where(np.isfinite(boundary.upper), boundary.upper, np.inf)
        self.lo, self.hi = lo, hi

    def __call__(self, t: float) -> tuple[float, float]:
        ts = self.t
        if len(ts) == 1 or t <= ts[0]:
            return float(self.lo[0]), float(self.hi[0])
        if t >= ts[-1]:
            return float(self.lo[-1]), float(self.hi[-1])
        k = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        out = []
        for arr in (self.lo, self.hi):
            a, b = arr[k], arr[k + 1]
            out.append(float(a + w * (b - a)) if np.isfinite(a) and np.isfinite(b)
                       else float(a if w < 0.5 else b))
        return out[0], out[1]


def shift_boundary(boundary: FreeBoundary, inward: float) -> FreeBoundary:
    """Boundaries moved into the continuation band by ``inward`` (a suboptimal rule)."""
    return replace(boundary, lower=boundary.lower + inward, upper=boundary.upper - inward,
                   lower_raw=None, upper_raw=None)


def _rule_band(rule):
    if isinstance(rule, FreeBoundary):
        return "boundary", _Band(rule)
    if rule in ("horizon", "immediate"):
        return rule, None
    raise SimulationError(f"unknown rule {rule!r}")


# -- dynamics ------------------------------------------------------------------------

def _ev(fld: CoefficientField, t, x):
    if fld.kind == "constant":
        return fld.value
    return fld(t, x)


class _Euler:
    scheme = "euler_maruyama"

    def __init__(self, problem: StoppingProblem):
        self.mu, self.sigma = problem.mu, problem.sigma

    def init(self, x0, ids, seed):
        self.truth = None
        return np.full(len(ids), float(x0))

    def x(self, t, s):
        return s

    def step(self, t, dt, s, z, idx):
        return s + _ev(self.mu, t, s) * dt + _ev(self.sigma, t, s) * math.sqrt(dt) * z


class _BinaryFilter:
    """theta in {-1, +1}, signal dZ = i theta dt + zeta dW, log-odds updated exactly."""
    scheme = "exact_filter"

    def __init__(self, problem: StoppingProblem):
        self.i = CoefficientField.coerce(problem.meta.get("i", "1"))
        self.zeta = CoefficientField.coerce(problem.meta.get("zeta", "1"))

    def init(self, x0, ids, seed):
        u = rng.uniforms(seed, ids, 1, rng.AUX)[:, 0]
        self.truth = np.where(u < x0, 1.0, -1.0)
        return np.full(len(ids), math.log(x0 / (1 - x0)))

    def x(self, t, s):
        return 0.5 * (1.0 + np.tanh(0.5 * s))

    def step(self, t, dt, s, z, idx):
        tm = t + 0.5 * dt
        i, zeta = float(_ev(self.i, tm, 0.5)), float(_ev(self.zeta, tm, 0.5))
        return s + 2 * i * i / zeta ** 2 * self.truth[idx] * dt + 2 * i / zeta * math.sqrt(dt) * z


class _FiniteFilter:
    """theta from a finite-support posterior; the sufficient statistic Z is simulated."""
    scheme = "exact_filter"

    def __init__(self, problem: StoppingProblem):
        self.filt = problem.meta["filter"]

    def init(self, x0, ids, seed, t0=0.0):
        f = self.filt
        z0 = float(f.z_of(t0, x0))
        w = f.weights(t0, z0)
        u = rng.uniforms(seed, ids, 1, rng.AUX)[:, 0]
        k = np.minimum(np.searchsorted(np.cumsum(w), u, side="right"), len(w) - 1)
        self.truth = f.theta[k]
        return np.full(len(ids), z0)

    def x(self, t, s):
        return self.filt.belief(t, s)

    def step(self, t, dt, s, z, idx):
        f = self.filt
        return s + f.i * self.truth[idx] * dt + f.zeta * math.sqrt(dt) * z


def _dynamics(problem: StoppingProblem, scheme: str | None):
    if problem.actions:
        raise SimulationError("simulation of controlled problems is not supported")
    learning = problem.meta.get("learning")
    if scheme is None:
        scheme = "exact_filter" if learning else "euler_maruyama"
    if scheme not in SCHEMES:
        raise SimulationError(f"unknown scheme '{scheme}'")
    if scheme == "euler_maruyama":
        return _Euler(problem)
    if learning == "binary":
        return _BinaryFilter(problem)
    if learning == "finite_support":
        return _FiniteFilter(problem)
    raise SimulationError("exact filtering needs a learning model")


# -- engine --------------------------------------------------------------------------

@dataclass
class _Observer:
    problem: StoppingProblem
    mode: str
    band: _Band | None
    discount: CoefficientField
    flow: CoefficientField


def _observer(problem: StoppingProblem, rule, use_deadline: bool) -> _Observer:
    mode, band = _rule_band(rule)
    disc, flow = problem.discount, problem.flow
    dl = problem.meta.get("deadline")
    if dl and use_deadline:
        disc = CoefficientField.constant(dl["base_discount"])
        flow = CoefficientField.coerce(dl.get("base_flow", problem.flow))
    return _Observer(problem, mode, band, disc, flow)


def _t_end(problem: StoppingProblem, t0: float, t_max: float | None, deadline) -> float:
    if t_max is not None:
        return float(t_max)
    if not problem.perpetual:
        return float(problem.horizon)
    r = problem.discount
    ts = np.linspace(0.0, problem.window, 21)
    xs = np.linspace(*_domain_probe(problem), 41)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    rmin = float(np.min(np.broadcast_to(r(T, X), T.shape)))
    if rmin > 0:
        return t0 + math.log(1.0 / TRUNCATION_DISCOUNT) / rmin
    return t0 + 10.0 * problem.window


def _domain_probe(problem):
    lo, hi = problem.domain
    lo = lo if np.isfinite(lo) else -10.0
    hi = hi if np.isfinite(hi) else 10.0
    eps = 1e-6 * (hi - lo)
    return lo + eps, hi - eps


def _alpha_bound(problem, alpha, t0, t_end) -> float:
    ts = np.linspace(t0, min(t_end, t0 + 10 * problem.window), 41)
    xs = np.linspace(*_domain_probe(problem), 201)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    return 1.05 * float(np.max(np.broadcast_to(alpha(T, X), T.shape))) + 1e-12


def _run(problems, rules, n_paths, seed, dt_sim, x0, t0=0.0, t_max=None, scheme=None,
         use_deadline=True, path_offset=0, x_range=None):
    base = problems[0]
    dyn = _dynamics(base, scheme)
    obs = [_observer(p, r, use_deadline) for p, r in zip(problems, rules)]
    ids = np.arange(path_offset, path_offset + n_paths, dtype=np.uint64)
    n = n_paths
    dl = base.meta.get("deadline") if use_deadline else None
    if dl and float(CoefficientField.coerce(dl["alpha"]).value if
                    CoefficientField.coerce(dl["alpha"]).kind == "constant" else 1.0) == 0.0:
        dl = None
    t_end = _t_end(base, t0, t_max, dl)
    lo_dom, hi_dom = x_range if x_range is not None else (-np.inf, np.inf)
    state = dyn.init(x0, ids, seed) if not isinstance(dyn, _FiniteFilter) else dyn.init(x0, ids, seed, t0)
    X = np.full(n, float(x0))
    K = len(obs)
    active = np.ones((K, n), dtype=bool)
    D = np.ones((K, n))
    acc = np.zeros((K, n))
    tau = np.full((K, n), np.nan)
    xt = np.full((K, n), np.nan)
    pay = np.full((K, n), np.nan)
    alt = np.full((K, n), -1, dtype=np.int8)
    dhit = np.zeros((K, n), dtype=bool)
    cens = np.zeros((K, n), dtype=bool)
    trunc = np.zeros((K, n), dtype=bool)
    for k, o in enumerate(obs):
        if o.mode == "immediate":
            stop0 = True
        elif o.mode == "horizon":
            stop0 = t_end <= t0
        else:
            lo, hi = o.band(t0)
            stop0 = x0 <= lo or x0 >= hi
        if stop0:
            active[k] = False
            tau[k] = t0
            xt[k] = x0
            pay[k] = float(o.problem.g(t0, x0))
            alt[k] = 1 if bool(o.problem.payoff.active(t0, x0)) else 0
    # deadline clocks
    if dl:
        alpha = CoefficientField.coerce(dl["alpha"])
        gamma = CoefficientField.coerce(dl["gamma"])
        abar = _alpha_bound(base, alpha, t0, t_end)
        cidx = np.zeros(n, dtype=np.int64)
        w = rng.words_at(seed, ids, cidx, rng.DEADLINE)
        cand = t0 - np.log(rng.to_unit(w[:, 0])) / abar
        accept_u = rng.to_unit(w[:, 1])
        over_bound = 0
    nsteps = int(math.ceil((t_end - t0) / dt_sim - 1e-9))
    zbuf = np.zeros((n, CHUNK))
    f0 = [np.broadcast_to(np.asarray(_ev(o.flow, t0, X), dtype=float), (n,)).copy() for o in obs]
    r0 = [np.broadcast_to(np.asarray(_ev(o.discount, t0, X), dtype=float), (n,)).copy() for o in obs]
    for j in range(nsteps):
        live = active.any(axis=0)
        if not live.any():
            break
        idx = np.nonzero(live)[0]
        if j % CHUNK == 0:
            zbuf[idx] = rng.normals(seed, ids[idx], CHUNK, rng.BROWNIAN, start_block=j // 4)
        t = t0 + j * dt_sim
        t1 = min(t0 + (j + 1) * dt_sim, t_end)
        h = t1 - t
        s_new = dyn.step(t, h, state[idx], zbuf[idx, j % CHUNK], idx)
        xa, xb = X[idx], dyn.x(t1, s_new)
        # deadline events inside the step (shared by all observers)
        th_d = np.full(len(idx), np.inf)
        if dl:
            pending = cand[idx] <= t1
            while pending.any():
                pi = np.nonzero(pending)[0]
                gi = idx[pi]
                tc = cand[gi]
                wgt = (tc - t) / h
                xc = xa[pi] + wgt * (xb[pi] - xa[pi])
                a = np.broadcast_to(np.asarray(_ev(alpha, tc, xc), dtype=float), tc.shape)
                over_bound += int(np.sum(a > abar))
                ok = accept_u[gi] < a / abar
                th_d[pi[ok]] = np.minimum(th_d[pi[ok]], wgt[ok])
                # the next candidate of every path processed here
                cidx[gi] += 1
                w = rng.words_at(seed, ids[gi], cidx[gi], rng.DEADLINE)
                cand[gi] = tc - np.log(rng.to_unit(w[:, 0])) / abar
                accept_u[gi] = rng.to_unit(w[:, 1])
                pending = np.zeros(len(idx), dtype=bool)
                pending[pi] = (cand[gi] <= t1) & ~np.isfinite(th_d[pi])
        last = t1 >= t_end - 1e-12
        for k, o in enumerate(obs):
            ak = active[k, idx]
            if not ak.any():
                continue
            sel = idx[ak]
            xa_k, xb_k = xa[ak], xb[ak]
            th = np.full(len(sel), np.inf)
            xs = np.full(len(sel), np.nan)
            if o.mode == "boundary":
                la, ha = o.band(t)
                lb, hb = o.band(t1)
                if np.isfinite(la) and np.isfinite(lb):
                    c = xb_k <= lb
                    da, db = xa_k[c] - la, xb_k[c] - lb
                    tl = np.clip(da / np.where(da - db > 0, da - db, 1.0), 0.0, 1.0)
                    th[c] = tl
                    xs[c] = la + tl * (lb - la)
                if np.isfinite(ha) and np.isfinite(hb):
                    c = xb_k >= hb
                    da, db = ha - xa_k[c], hb - xb_k[c]
                    tu = np.clip(da / np.where(da - db > 0, da - db, 1.0), 0.0, 1.0)
                    better = tu < th[c]
                    ci = np.nonzero(c)[0][better]
                    th[ci] = tu[better]
                    xs[ci] = ha + tu[better] * (hb - ha)
            kind = np.where(np.isfinite(th), 1, 0)       # 1 boundary
            # leaving the numeric domain
            out = (xb_k <= lo_dom) | (xb_k >= hi_dom)
            if out.any():
                edge = np.where(xb_k <= lo_dom, lo_dom, hi_dom)
                te = np.clip((edge - xa_k) / np.where(xb_k != xa_k, xb_k - xa_k, 1.0), 0.0, 1.0)
                use = out & (te < th)
                th[use], xs[use], kind[use] = te[use], edge[use], 3
            thd = th_d[ak]
            use = thd < th
            th[use] = thd[use]
            xs[use] = xa_k[use] + thd[use] * (xb_k[use] - xa_k[use])
            kind[use] = 2
            if last:
                use = ~np.isfinite(th)
                th[use], xs[use], kind[use] = 1.0, xb_k[use], 4
            stop = np.isfinite(th)
            full = ~stop
            # flow and discount over the step (partial for stopping paths)
            frac = np.where(stop, th, 1.0)
            te = t + frac * h
            xe = np.where(stop, xs, xb_k)
            re = np.broadcast_to(np.asarray(_ev(o.discount, te, xe), dtype=float), te.shape)
            fe = np.broadcast_to(np.asarray(_ev(o.flow, te, xe), dtype=float), te.shape)
            Dk = D[k, sel]
            De = Dk * np.exp(-0.5 * frac * h * (r0[k][sel] + re))
            acc[k, sel] += 0.5 * frac * h * (Dk * f0[k][sel] + De * fe)
            D[k, sel] = De
            r0[k][sel], f0[k][sel] = re, fe
            if stop.any():
                si = sel[stop]
                ks, ts, xss, ds = kind[stop], te[stop], xs[stop], De[stop]
                g = np.broadcast_to(np.asarray(o.problem.g(ts, xss), dtype=float), ts.shape)
                val = g.copy()
                if (ks == 2).any():
                    m = ks == 2
                    val[m] = np.broadcast_to(np.asarray(_ev(gamma, ts[m], xss[m]), dtype=float), ts[m].shape)
                if (ks == 3).any():
                    m = ks == 3
                    for q in np.nonzero(m)[0]:
                        lo_v, hi_v = o.problem.edge_values(float(ts[q]), lo_dom, hi_dom)
                        val[q] = lo_v if xss[q] <= lo_dom else hi_v
                pay[k, si] = acc[k, si] + ds * val
                tau[k, si] = ts
                xt[k, si] = xss
                alt[k, si] = np.where(ks == 2, -1,
                                      np.asarray(o.problem.payoff.active(ts, xss), dtype=np.int8))
                dhit[k, si] = ks == 2
                cens[k, si] = ks == 3
                trunc[k, si] = (ks == 4) & base.perpetual
                active[k, si] = False
        state[idx] = s_new
        X[idx] = xb
    info = {"t_end": t_end, "n_steps": nsteps}
    if dl:
        info.update(alpha_bound=abar, alpha_bound_exceeded=over_bound)
    out = []
    for k, o in enumerate(obs):
        out.append(PathEnsemble(int(seed), n, float(dt_sim), float(x0), float(t0), dyn.scheme, ids.copy(),
                                tau[k], xt[k], pay[k], alt[k], dhit[k], cens[k], trunc[k],
                                None if dyn.truth is None else dyn.truth.copy(),
                                dict(info, censored=int(cens[k].sum()), truncated=int(trunc[k].sum()),
                                     rule=o.mode)))
    return out


def _x_range(boundary: FreeBoundary | None):
    if boundary is None or boundary.x_nodes is None:
        return None
    return float(boundary.x_nodes[0]), float(boundary.x_nodes[-1])


def simulate_stopped(problem: StoppingProblem, boundary: FreeBoundary | str, n_paths: int,
                     seed: int, dt_sim: float = 1e-3, x0: float | None = None, t0: float = 0.0,
                     t_max: float | None = None, scheme: str | None = None,
                     use_deadline: bool = True, x_range=None) -> PathEnsemble:
    """Simulate ``n_paths`` paths from (t0, x0) and stop them by the rule.

    ``boundary`` is a FreeBoundary (stop on leaving the band) or one of
    'immediate' / 'horizon'.  Perpetual runs are cut where the discount factor
    falls below TRUNCATION_DISCOUNT (paths stop there with the payoff).  Paths
    leaving the numeric domain are censored at the edge with the edge value.
    """
    if x0 is None:
        x0 = problem.grid.x0 if problem.grid.x0 is not None else problem.x_c
    if isinstance(boundary, FreeBoundary) and not boundary.valid:
        raise SimulationError("boundary has holes; no band rule")
    xr = x_range if x_range is not None else _x_range(boundary if isinstance(boundary, FreeBoundary) else None)
    return _run([problem], [boundary], n_paths, seed, dt_sim, x0, t0, t_max, scheme,
                use_deadline, x_range=xr)[0]


def estimate_value_mc(problem: StoppingProblem, rule, n_paths: int, seed: int,
                      dt_sim: float = 1e-3, x0: float | None = None, **kw) -> dict:
    """Mean discounted payoff of ``rule`` with its standard error."""
    ens = simulate_stopped(problem, rule, n_paths, seed, dt_sim, x0, **kw)
    m, se = ens.value()
    return {"mean": m, "se": se, "n": ens.n_paths, "censored": int(ens.censored.sum()),
            "truncated": int(ens.truncated.sum()), "deadline_hits": int(ens.deadline_hit.sum()),
            "ensemble": ens}


def _shared_dynamics(lo: StoppingProblem, hi: StoppingProblem, boundary: FreeBoundary):
    ts = np.asarray(boundary.t_nodes)[:: max(1, len(boundary.t_nodes) // 10)]
    xs = np.asarray(boundary.x_nodes) if boundary.x_nodes is not None else np.linspace(*_domain_probe(lo), 101)
    T, X = np.meshgrid(ts, xs, indexing="ij")
    for name in ("mu", "sigma"):
        a = np.broadcast_to(lo.coeff(name)(T, X), T.shape)
        b = np.broadcast_to(hi.coeff(name)(T, X), T.shape)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-14):
            raise SimulationError(f"problems differ in {name}; no common path")
    if lo.meta.get("learning") != hi.meta.get("learning") or \
            lo.meta.get("deadline") != hi.meta.get("deadline"):
        raise SimulationError("problems differ in signal model or deadline")


def coupled_stopping_rank(problem_lo: StoppingProblem, problem_hi: StoppingProblem,
                          boundary_lo: FreeBoundary, boundary_hi: FreeBoundary, n_paths: int,
                          seed: int, dt_sim: float = 1e-3, x0: float | None = None,
                          t0: float = 0.0, t_max: float | None = None) -> dict:
    """Drive one path per seed through both rules; ``hi`` is the problem with the
    larger continuation region, so tau_hi >= tau_lo - dt_sim should hold path-wise."""
    _shared_dynamics(problem_lo, problem_hi, boundary_lo)
    if x0 is None:
        x0 = problem_lo.grid.x0 if problem_lo.grid.x0 is not None else problem_lo.x_c
    e_lo, e_hi = _run([problem_lo, problem_hi], [boundary_lo, boundary_hi], n_paths, seed, dt_sim,
                      x0, t0, t_max, x_range=_x_range(boundary_lo))
    bad = e_hi.tau < e_lo.tau - dt_sim
    return {"tau_lo": e_lo.tau, "tau_hi": e_hi.tau, "violations": int(bad.sum()),
            "passed": not bad.any(), "n": n_paths, "dt_sim": dt_sim,
            "mean_tau_lo": fsum_mean_se(e_lo.tau)[0], "mean_tau_hi": fsum_mean_se(e_hi.tau)[0],
            "ties": int(np.sum(e_hi.tau == e_lo.tau))}


# -- accuracy ----------------------------------------------------------------------

@dataclass
class AccuracyProfile:
    t_bin_lo: np.ndarray
    t_bin_hi: np.ndarray
    rows: list                # dicts: alt, bin, accuracy, ci_lo, ci_hi, count, absent, theory
    trend: dict
    min_count: int = 30

    def series(self, alt: int) -> dict:
        rs = [r for r in self.rows if r["alt"] == alt]
        return {k: np.array([r[k] for r in rs]) for k in ("accuracy", "ci_lo", "ci_hi", "count",
                                                           "absent", "theory")}


def _wilson(k: int, n: int, level: float) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def accuracy_profile(ensemble: PathEnsemble, boundary: FreeBoundary | None = None,
                     bins=10, min_count: int = 30, level: float = 0.95) -> AccuracyProfile:
    """Empirical probability that the chosen alternative is correct, per stopping-time bin.

    The a-branch is correct when theta >= 0.  Bins with fewer than ``min_count``
    stops are flagged absent.  The trend test is Kendall's tau between stopping
    time and correctness over all decided paths (one-sided p-values both ways).
    """
    if ensemble.truth is None:
        raise SimulationError("ensemble carries no ground truth; simulate with exact filtering")
    ok = (ensemble.alternative >= 0) & ~ensemble.censored & ~ensemble.truncated
    tau = ensemble.tau[ok]
    chose_a = ensemble.alternative[ok] == 1
    correct = np.where(chose_a, ensemble.truth[ok] >= 0, ensemble.truth[ok] < 0)
    if np.ndim(bins) == 0:
        hi = float(np.quantile(tau, 0.99)) if tau.size else ensemble.t0 + 1.0
        edges = np.linspace(ensemble.t0, max(hi, ensemble.t0 + ensemble.dt_sim), int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    band = _Band(boundary) if boundary is not None else None
    rows = []
    b = np.clip(np.searchsorted(edges, tau, side="right") - 1, 0, len(edges) - 2)
    inside = (tau >= edges[0]) & (tau <= edges[-1])
    for alt in (1, 0):
        for j in range(len(edges) - 1):
            m = inside & (b == j) & (chose_a == (alt == 1))
            n = int(m.sum())
            k = int(correct[m].sum())
            row = {"alt": alt, "bin": j, "t_lo": float(edges[j]), "t_hi": float(edges[j + 1]),
                   "count": n, "absent": n < min_count, "accuracy": float("nan"),
                   "ci_lo": float("nan"), "ci_hi": float("nan"), "theory": float("nan")}
            if n >= min_count:
                row["accuracy"] = k / n
                row["ci_lo"], row["ci_hi"] = _wilson(k, n, level)
            if band is not None:
                ts = np.linspace(edges[j], edges[j + 1], 9)
                vals = [band(float(t))[1 if alt == 1 else 0] for t in ts]
                th = float(np.mean(vals))
                row["theory"] = th if alt == 1 else 1.0 - th
            rows.append(row)
    if tau.size > 2 and np.ptp(tau) > 0 and 0 < correct.sum() < correct.size:
        dec = stats.kendalltau(tau, correct.astype(float), alternative="less")
        inc = stats.kendalltau(tau, correct.astype(float), alternative="greater")
        two = stats.kendalltau(tau, correct.astype(float))
        trend = {"kendall_tau": float(two.statistic), "p_decreasing": float(dec.pvalue),
                 "p_increasing": float(inc.pvalue), "p_two_sided": float(two.pvalue), "n": int(tau.size)}
    else:
        trend = {"kendall_tau": float("nan"), "p_decreasing": 1.0, "p_increasing": 1.0,
                 "p_two_sided": 1.0, "n": int(tau.size)}
    return AccuracyProfile(edges[:-1].copy(), edges[1:].copy(), rows, trend, min_count)


# -- belief consistency ----------------------------------------------------------------

def belief_consistency(problem: StoppingProblem, n_paths: int = 10_000, dt: float = 1e-4,
                       t_end: float = 1.0, seed: int = 0, x0: float | None = None) -> dict:
    """Exact filtering of a simulated signal vs the belief SDE on the same noise.

    The belief SDE dX = sigma(t, X) dW_hat is driven by the innovation increments
    of the filtered signal, so both schemes target the same path; the report
    gives the two-sample KS distance of terminal states and the path-wise gap.
    """
    learning = problem.meta.get("learning")
    if learning not in ("binary", "finite_support"):
        raise SimulationError("belief consistency needs a learning model")
    x0 = problem.x_c if x0 is None else x0
    dyn = _dynamics(problem, "exact_filter")
    ids = np.arange(n_paths, dtype=np.uint64)
    s = dyn.init(x0, ids, seed) if learning == "binary" else dyn.init(x0, ids, seed, 0.0)
    xe = np.full(n_paths, float(x0))
    xs = xe.copy()
    nsteps = int(round(t_end / dt))
    allidx = np.arange(n_paths)
    zbuf = None
    gap = 0.0
    for j in range(nsteps):
        if j % CHUNK == 0:
            zbuf = rng.normals(seed, ids, CHUNK, rng.BROWNIAN, start_block=j // 4)
        t = j * dt
        z = zbuf[:, j % CHUNK]
        if learning == "binary":
            i = float(_ev(dyn.i, t + 0.5 * dt, 0.5))
            zeta = float(_ev(dyn.zeta, t + 0.5 * dt, 0.5))
            # signal increment and its innovation given the current belief
            dZ = i * dyn.truth * dt + zeta * math.sqrt(dt) * z
            dW = (dZ - i * (2 * xe - 1) * dt) / zeta
        else:
            f = dyn.filt
            dZ = f.i * dyn.truth * dt + f.zeta * math.sqrt(dt) * z
            mean = f.weights(t, s) @ f.theta
            dW = (dZ - f.i * mean * dt) / f.zeta
        sig = np.broadcast_to(np.asarray(_ev(problem.sigma, t, xs), dtype=float), xs.shape)
        xs = np.clip(xs + sig * dW, 0.0, 1.0)
        s = dyn.step(t, dt, s, z, allidx)
        xe = dyn.x(t + dt, s)
        if (j + 1) % 100 == 0:
            gap = max(gap, float(np.max(np.abs(xs - xe))))
    ks = stats.ks_2samp(xe, xs, method="asymp")
    return {"ks": float(ks.statistic), "pvalue": float(ks.pvalue), "max_path_gap": gap,
            "terminal_gap": float(np.max(np.abs(xs - xe))), "n": n_paths, "dt": dt, "t_end": t_end}
