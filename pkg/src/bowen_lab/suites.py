"""Experiment suites behind the command-line driver.

Each suite returns a :class:`SuiteResult`: CSV columns and rows, a summary
record and named verdicts (``pass`` / ``fail`` / ``warn``).
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field

import numpy as np

from . import bowen
from . import charts as ch
from . import linearization as lin
from . import splitting as sp
from . import systems as sysm
from .errors import DominationError
from .rng import ball_probes, parallel_map, pick_centers

LINEARIZE_COLUMNS = ("system", "center_ix", "probe_ix", "p", "u_norm", "increment", "used", "gamma_hat")
SPECTRUM_COLUMNS = ("system", "center_ix", "alpha_hat", "beta_hat", "pinch_margin", "verdict")
B1_COLUMNS = ("system", "center_ix", "p", "eps", "diam_prime_b1", "diam_prime_full", "ineq52_ok", "ineq53_ok")
LINEARIZE_PROBES = 8
LINEAR_TOL = 1e-10
GAMMA_BOUND = 0.95
SPREAD_BOUND = 10.0
COVERAGE_BOUND = 0.8
UNIFORMITY_FACTOR = 1.5
ORACLE_RTOL = 0.03


@dataclass
class SuiteResult:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)


def verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _centers(cfg, sample):
    return pick_centers(sample.points, cfg.centers, cfg.seed)


# ---------------------------------------------------------------------------


def _slow_state(system, z, probes, p_max, horizon):
    """Increments of the slow-bundle linearization (systems with a fast bundle)."""
    est = sp.estimate_splitting(system, z, horizon)
    ladder = sp.linearize_E1_ladder(system, est, probes, p_max)
    inc = np.linalg.norm(np.diff(ladder, axis=0), axis=2).T  # (n, p_max)
    norms = np.linalg.norm(probes, axis=1)
    g, c, used = lin.fit_geometric(inc, norms)
    return lin.LinearizationState(est.chart, p_max, probes, ladder[-1], inc, used, g, c)


def run_linearize(cfg, system, sample, workers=None) -> SuiteResult:
    """Cauchy increments of the approximants on seeded probes at each center.

    Systems with a fast unstable bundle are pinched only on the slow bundle,
    so there the linearization restricted to the slow bundle is run.
    """
    idx, pts = _centers(cfg, sample)
    p_max = min(cfg.p_max, lin.P_CAP)
    slow_only = sp.fast_rank(system) > 0
    if system.linear or slow_only:
        k = 1
        summary = {"block_exponent": 1, "restricted_to_slow_bundle": slow_only}
    else:
        pc = lin.pinch_constants(system, pts[0], cfg.horizon, seed=cfg.seed)
        k = pc.t0_blocks
        summary = {"block_exponent": k, "gamma": pc.gamma, "C": pc.C, "alpha": pc.alpha, "beta": pc.beta,
                   "D": pc.D, "C1": pc.C1, "restricted_to_slow_bundle": False}
    blocked = sysm.with_block(sysm.base_system(system), k)
    dim = system.unstable_dim - sp.fast_rank(system)

    def one(item):
        ix, z = item
        probes = ball_probes(cfg.seed, int(ix), LINEARIZE_PROBES, dim, cfg.eps)
        if slow_only:
            return ix, _slow_state(system, z, probes, p_max, cfg.horizon), math.nan
        chart = ch.Atlas(blocked, z, back=p_max + 2, fwd=4).chart(0)
        st = lin.linearization_state(blocked, chart, probes, p_max)
        conj = lin.conjugacy_residual(blocked, chart, probes, p_max, 1) if system.linear else math.nan
        return ix, st, conj

    states = parallel_map(one, list(zip(idx, pts)), workers)
    res = SuiteResult("linearize", LINEARIZE_COLUMNS)
    gammas, spreads, incs, conjs = [], [], [], []
    for ix, st, conj in states:
        norms = st.probe_norms
        for i in range(len(norms)):
            for p in range(1, st.order + 1):
                res.rows.append((system.label, int(ix), i, p, float(norms[i]), float(st.increments[i, p - 1]),
                                 bool(st.used[i, p - 1]), st.gamma_hat))
        gammas.append(st.gamma_hat)
        spreads.append(st.spread())
        incs.append(float(st.increments.max()))
        conjs.append(conj)
    if system.linear:
        conj_ok = slow_only or max(conjs) <= LINEAR_TOL
        res.verdicts["linear_identity"] = verdict(max(incs) <= LINEAR_TOL and conj_ok)
        summary.update(max_increment=max(incs), max_conjugacy_residual=max(conjs))
    else:
        fin = [g for g in gammas if math.isfinite(g)]
        res.verdicts["gamma_at_most_0_95"] = verdict(len(fin) == len(gammas) and max(fin) <= GAMMA_BOUND)
        sfin = [s for s in spreads if math.isfinite(s)]
        res.verdicts["spread_within_10x"] = verdict(len(sfin) == len(spreads) and max(sfin) <= SPREAD_BOUND)
        summary.update(gamma_hat_max=max(fin) if fin else math.nan, spread_max=max(sfin) if sfin else math.nan)
    res.summary = summary
    return res


def run_distortion(cfg, system, sample, workers=None) -> SuiteResult:
    """Bowen-ball distortion ratios, their p-uniformity and the shrink radius."""
    out = bowen.distortion_R(system, sample, cfg.delta, cfg.eps, cfg.p_max, cfg.centers, cfg.seed,
                             workers=workers, slab=cfg.slab)
    res = SuiteResult("distortion", bowen.DISTORTION_COLUMNS)
    res.rows = [astuple(r) for r in out.rows]
    half = max(1, cfg.p_max // 2)
    lo, hi = out.max_over(1, half), out.max_over(half + 1, cfg.p_max)
    shrink = bowen.shrink_from_traces(out.traces, cfg.eps, cfg.rho, p_max=cfg.p_max)
    res.summary = {"R_hat": out.R_hat, "coverage": out.coverage, "max_ratio_low_p": lo, "max_ratio_high_p": hi,
                   "shrink_delta": shrink.delta, "shrink_warning": shrink.warning}
    res.verdicts["coverage_at_least_0_8"] = verdict(out.coverage >= COVERAGE_BOUND)
    if math.isfinite(lo) and math.isfinite(hi):
        res.verdicts["ratio_p_uniform"] = verdict(hi <= UNIFORMITY_FACTOR * lo)
    else:
        res.verdicts["ratio_p_uniform"] = "warn"
    if system.linear:
        target = cfg.eps / cfg.delta
        res.verdicts["ratio_matches_linear_oracle"] = verdict(abs(out.R_hat - target) <= ORACLE_RTOL * target)
    res.verdicts["shrink_delta_found"] = "warn" if shrink.warning else "pass"
    return res


def run_spectrum(cfg, system, sample, workers=None) -> SuiteResult:
    """Finite-time expansion rates of the slow bundle and the pinching margin."""
    idx, pts = _centers(cfg, sample)
    rows = sp.pinching_report(system, pts, cfg.horizon, cfg.alpha, workers)
    res = SuiteResult("spectrum", SPECTRUM_COLUMNS)
    for ix, r in zip(idx, rows):
        res.rows.append((system.label, int(ix), r.alpha_hat, r.beta_hat, r.pinch_margin, r.verdict))
    margins = [r.pinch_margin for r in rows]
    res.summary = {"min_margin": min(margins), "alpha": cfg.alpha,
                   "max_spread": max(r.beta_hat - r.alpha_hat for r in rows)}
    res.verdicts["pinching_margin"] = verdict(all(r.verdict == "pass" for r in rows))
    return res


def run_splitting(cfg, system, sample, workers=None) -> SuiteResult:
    """Max-component Bowen sets versus their slow parts.

    The CSV columns ``ineq52_ok`` / ``ineq53_ok`` record, per (center, p),
    whether the slow set's diameter is at most / at least the full set's;
    the second comparison is only asserted for ``p >= p_eps``.
    """
    idx, pts = _centers(cfg, sample)
    p_max = cfg.p_max

    def one(z):
        est = sp.estimate_splitting(system, z, cfg.horizon)
        trace = ch.local_trace(est.chart, sample, cfg.eps, slab=cfg.slab)
        refined = bowen.refined_trace(est.chart, sample, cfg.eps, p_max, slab=cfg.slab)
        sets = [sp.check_b1_set(system, est, refined, p, cfg.eps) for p in range(p_max + 1)]
        return est, trace, sets

    items = parallel_map(one, list(pts), workers)
    ests = [e for e, _, _ in items]
    omega, used = sp.omega_eps([t for _, t, _ in items], [sp.prime_context_along(e, 0) for e in ests])
    res = SuiteResult("splitting", B1_COLUMNS)
    dominated = all(e.dominated for e in ests) and system.unstable_dim > 1
    pe = None
    summary = {"omega_hat": omega, "centers_used": used, "dominated": dominated}
    if dominated and omega > 0:
        try:
            cons = [sp.domination_constants(e) for e in ests]
            lam1 = max(c[0] for c in cons)
            mu2 = min(c[1] for c in cons)
            pe = sp.p_eps(cfg.eps, omega, mu2, lam1)
            summary.update(lambda1=lam1, mu2=mu2, p_eps=pe)
        except DominationError:
            pe = None
    ok52, ok53 = True, True
    for ix, (_, _, sets) in zip(idx, items):
        for r in sets:
            b52 = r.below_full
            if pe is not None and r.p >= pe:
                b53 = r.above_full
                ok53 &= b53
                s53 = b53
            else:
                s53 = None
            ok52 &= b52
            res.rows.append((system.label, int(ix), r.p, cfg.eps, r.diam_prime_b1, r.diam_prime_full, b52, s53))
    res.verdicts["slow_set_within_full_set"] = verdict(ok52)
    res.verdicts["omega_positive"] = verdict(omega > 0)
    res.verdicts["full_set_within_slow_set_beyond_p_eps"] = verdict(ok53) if pe is not None else "warn"
    res.summary = summary
    return res


RUNNERS = {
    "linearize": run_linearize,
    "distortion": run_distortion,
    "spectrum": run_spectrum,
    "splitting": run_splitting,
}
