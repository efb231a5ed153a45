"""Iterative linearization of the chart maps on unstable leaves.

For a chart at ``x`` the order-p approximant is

    F_p(u) = d f_hat^p_{f^{-p} x}(0) . f_hat_x^{-p}(u),

the derivative cocycle at the base orbit applied to the pulled-back chart
vector.  Under the pinching ``gamma = 8 C^3 exp(-alpha k / 2) < 1`` (``k`` the
block exponent) the increments ``|F_{p+1}(u) - F_p(u)|`` decay geometrically
like ``gamma^p |u|^2``; the limit conjugates the chart maps to their
derivatives at the base orbit.  This module computes the approximants, the
companion operators ``L``, the residuals of the conjugacy identities and
the constants that control all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import charts as ch
from . import systems as sysm
from .errors import DomainError, PinchViolation, RadiusError
from .rng import ball_probes

P_CAP = 14
FIT_FROM = 3  # increments with p < FIT_FROM are warm-up terms
GAMMA_TARGET = 0.9
FLOOR_FACTOR = 32.0  # increments below FLOOR_FACTOR * eps * p * |u| are round-off
FD_STEP = 1e-6


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class PinchConstants:
    """Constants of the pinching condition for a configured block exponent."""

    C: float
    alpha: float
    beta: float
    t0_blocks: int
    gamma: float
    D: float

    def __post_init__(self):
        if self.alpha > self.beta + 1e-12:
            raise DomainError("alpha must not exceed beta")
        if self.D < 0:
            raise DomainError("D must be nonnegative")

    @property
    def C1(self) -> float:
        """Prefactor 10 D / (1 - gamma) of the geometric rate."""
        if self.gamma >= 1:
            return math.inf
        return 10.0 * self.D / (1.0 - self.gamma)


def gamma_of(C: float, alpha: float, k: int) -> float:
    return 8.0 * C ** 3 * math.exp(-alpha * k / 2.0)


def block_exponent(C: float, alpha: float, target: float = GAMMA_TARGET, k_max: int = 256) -> int:
    """Smallest block exponent k with 8 C^3 exp(-alpha k / 2) < target."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    for k in range(1, k_max + 1):
        if gamma_of(C, alpha, k) < target:
            return k
    raise DomainError("no block exponent below k_max achieves the target")


def pinch_constants(system, x, horizon: int = 60, k: Optional[int] = None, D: Optional[float] = None,
                    n_charts: int = 10, probes: int = 10, seed: int = 0) -> PinchConstants:
    """Measure C, alpha, beta at ``x``, pick the block exponent and estimate D.

    The rates are finite-time rates of the slow unstable cocycle of the
    base map; ``D`` is the Taylor constant of the chart maps of the block
    map ``f^k`` over ``n_charts`` points of the orbit of ``x``.
    """
    from .splitting import finite_time_rates

    base = sysm.base_system(system)
    alpha, beta = finite_time_rates(base, x, horizon)
    chart = ch.make_chart(base, x, back=4, fwd=4)
    C = chart.C
    k = block_exponent(C, alpha) if k is None else int(k)
    blocked = sysm.with_block(base, k)
    if D is None:
        at = ch.Atlas(blocked, x, back=2, fwd=n_charts + 2)
        D = estimate_taylor_D(blocked, [at.chart(j) for j in range(n_charts)], ch.EPS1, probes, seed)
    return PinchConstants(C, alpha, beta, k, gamma_of(C, alpha, k), float(D))


@dataclass(frozen=True)
class Radii:
    """Working radii of a run and the radius the contraction argument asks for."""

    eps0: float
    eps1: float
    eps2: float
    eps2_theory: float


def working_radii(constants: PinchConstants, eps0: float = ch.EPS0, eps1: float = ch.EPS1) -> Radii:
    """``eps2 = eps1`` is used as working radius; the theoretical one is recorded.

    The theoretical radius is ``min(eps1 / (2 C1), (1 - gamma) / (60 D))``.
    The charts of the shipped systems are global leaf parametrizations, so
    nothing breaks at the larger working radius; the conclusions are
    checked numerically instead of being inherited from the smallness
    conditions.
    """
    C1 = constants.C1
    if constants.D == 0:
        theory = eps1
    elif math.isinf(C1):
        theory = 0.0
    else:
        theory = min(eps1 / (2 * C1), (1 - constants.gamma) / (60 * constants.D))
    return Radii(eps0, eps1, eps1, theory)


def estimate_taylor_D(system, charts: Sequence, eps1: float = ch.EPS1, probes: int = 10,
                      seed: int = 0, h: float = FD_STEP) -> float:
    """max |f_hat(v) - f_hat(u) - d f_hat(u)(v - u)| / |v - u|^2 over probe pairs.

    ``d f_hat(u)`` is a central finite difference with step ``h``.  Pairs
    ``u, v`` are drawn uniformly from the ``eps1``-ball of each chart.
    """
    if len(charts) < 1:
        raise DomainError("need at least one chart")
    worst = 0.0
    for i, chart in enumerate(charts):
        ch._check_system(system, chart)
        r = chart.dim
        pts = ball_probes(seed, i, 2 * probes, r, eps1)
        U, V = pts[:probes], pts[probes:]
        fu = ch.hat_f_power(chart, U, 1)
        fv = ch.hat_f_power(chart, V, 1)
        J = np.empty((probes, r, r))
        for a in range(r):
            e = np.zeros(r)
            e[a] = h
            J[:, :, a] = (ch.hat_f_power(chart, U + e, 1) - ch.hat_f_power(chart, U - e, 1)) / (2 * h)
        rem = fv - fu - np.einsum("nab,nb->na", J, V - U)
        d = np.linalg.norm(V - U, axis=1)
        ok = d > 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.linalg.norm(rem[ok], axis=1) / d[ok] ** 2)))
    return worst


# ---------------------------------------------------------------------------
# approximants


def _batch(u, r):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    return np.atleast_2d(u).reshape(-1, r), single


def F_p(system, chart: ch.UnstableChart, u, p: int, eps2: Optional[float] = None) -> np.ndarray:
    """Order-p approximant ``d f_hat^p_{f^{-p}x}(0) . f_hat_x^{-p}(u)``.

    With ``eps2`` given the range bound ``|F_p(u)| <= 2 eps2`` is enforced
    (a violation signals a block exponent too small for the pinching).
    """
    ch._check_system(system, chart)
    if p < 0:
        raise DomainError("p must be >= 0")
    U, single = _batch(u, chart.dim)
    if eps2 is not None and np.any(np.linalg.norm(U, axis=1) > eps2 * (1 + 1e-12)):
        raise RadiusError("|u| exceeds eps2")
    if p == 0:
        out = U.copy()
    else:
        at, j = chart.atlas, chart.index
        w = at.pull_coords(j, U, p)
        out = w @ at.df0_power(j - p, p).T
    if eps2 is not None and np.any(np.linalg.norm(out, axis=1) > 2 * eps2):
        raise PinchViolation("approximant left the 2*eps2 ball")
    return out[0] if single else out


def approximant_ladder(system, chart, u, p_max: int) -> np.ndarray:
    """``[F_0(u), ..., F_{p_max}(u)]`` for a batch ``u`` (shape (p_max+1, n, r))."""
    U, _ = _batch(u, chart.dim)
    at, j = chart.atlas, chart.index
    out = np.empty((p_max + 1,) + U.shape)
    out[0] = U
    for p in range(1, p_max + 1):
        out[p] = at.pull_coords(j, U, p) @ at.df0_power(j - p, p).T
    return out


def round_off_floor(u_norm, p) -> np.ndarray:
    """Size below which an increment is indistinguishable from round-off."""
    return FLOOR_FACTOR * np.finfo(float).eps * np.asarray(p, dtype=float) * np.asarray(u_norm)


@dataclass(frozen=True, eq=False)
class LinearizationState:
    """Approximants over a probe set with their Cauchy increments and rate fit.

    ``increments[i, p - 1] = |F_p(u_i) - F_{p-1}(u_i)|`` for ``p = 1..order``;
    ``used`` marks the increments that entered the fit (``p >= FIT_FROM`` and
    above the round-off floor).
    """

    chart: ch.UnstableChart
    order: int
    probes: np.ndarray
    approximant_values: np.ndarray
    increments: np.ndarray
    used: np.ndarray = field(repr=False)
    gamma_hat: float = math.nan
    C1_hat: float = math.nan

    @property
    def probe_norms(self) -> np.ndarray:
        return np.linalg.norm(self.probes, axis=1)

    def normalized(self) -> np.ndarray:
        """increments / (gamma_hat^p |u|^2), NaN where not used."""
        p = np.arange(1, self.order + 1)[None, :]
        val = self.increments / (self.gamma_hat ** p * self.probe_norms[:, None] ** 2)
        return np.where(self.used, val, np.nan)

    def spread(self) -> float:
        """max/min over probes of sup_p increments / (gamma_hat^p |u|^2)."""
        val = self.normalized()
        rows = np.any(np.isfinite(val), axis=1)
        if not rows.any():
            return math.nan
        sup = np.nanmax(val[rows], axis=1)
        if sup.size == 0:
            return math.nan
        return float(sup.max() / sup.min())


def fit_geometric(increments: np.ndarray, norms: np.ndarray, p_from: int = FIT_FROM):
    """Least-squares fit of ln(increment / |u|^2) = ln C + p ln gamma.

    Returns ``(gamma_hat, C_hat, used)``; increments below the round-off
    floor and warm-up orders ``p < p_from`` are excluded.
    """
    n, P = increments.shape
    p = np.broadcast_to(np.arange(1, P + 1)[None, :], (n, P))
    used = (p >= p_from) & (increments > round_off_floor(norms[:, None], p)) & (norms[:, None] > 0)
    if used.sum() < 2 or len(np.unique(p[used])) < 2:
        return math.nan, math.nan, used
    y = np.log(increments[used] / norms[:, None].repeat(P, 1)[used] ** 2)
    A = np.column_stack([np.ones(used.sum()), p[used]])
    (c0, c1), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(math.exp(c1)), float(math.exp(c0)), used


def linearization_state(system, chart, probes, p_max: int = 12, p_from: int = FIT_FROM) -> LinearizationState:
    """Run the approximants on ``probes`` up to order ``p_max`` and fit the rate."""
    ch._check_system(system, chart)
    if p_max > P_CAP:
        raise DomainError(f"p_max exceeds the cap {P_CAP}")
    U, _ = _batch(probes, chart.dim)
    ladder = approximant_ladder(system, chart, U, p_max)
    inc = np.linalg.norm(np.diff(ladder, axis=0), axis=2).T  # (n, p_max)
    g, c, used = fit_geometric(inc, np.linalg.norm(U, axis=1), p_from)
    return LinearizationState(chart, p_max, U, ladder[-1], inc, used, g, c)


# ---------------------------------------------------------------------------
# identities and operators


def conjugacy_residual(system, chart, u, p: int, q: int) -> float:
    """|d f_hat_x^{-q}(0) F_p(u) - F_p at f^{-q}x applied to f_hat_x^{-q}(u)|."""
    if q < 1:
        raise DomainError("q must be >= 1")
    U, _ = _batch(u, chart.dim)
    at, j = chart.atlas, chart.index
    lhs = np.linalg.solve(at.df0_power(j - q, q), F_p(system, chart, U, p).T).T
    v = at.pull_coords(j, U, q)
    rhs = F_p(system, chart.shifted(-q), v, p)
    return float(np.max(np.linalg.norm(lhs - rhs, axis=1)))


def equivariance_residual(system, chart, u, p: int) -> float:
    """|d f_hat_x(0) F_p at x (u) - F_p at f(x) (f_hat_x(u))| (one forward step)."""
    U, _ = _batch(u, chart.dim)
    at, j = chart.atlas, chart.index
    lhs = F_p(system, chart, U, p) @ at.df0(j).T
    rhs = F_p(system, chart.shifted(1), ch.hat_f_power(chart, U, 1), p)
    return float(np.max(np.linalg.norm(lhs - rhs, axis=1)))


def L_operator(system, chart, xi, p: int, eps2: float = ch.EPS1, h_rel: float = FD_STEP) -> np.ndarray:
    """``d f_hat^p_{f^{-p}x}(f_hat_x^{-p} xi) . d f_hat_x^{-p}(0)`` as an r x r matrix.

    Computed as the derivative at ``w = 0`` of
    ``w -> f_hat^p(f_hat^{-p}(xi) + d f_hat^{-p}(0) w)`` by central differences
    with step ``h_rel * eps2`` in the ``w`` variable.
    """
    ch._check_system(system, chart)
    xi = np.asarray(xi, dtype=float).reshape(chart.dim)
    if np.linalg.norm(xi) > eps2 / 2 * (1 + 1e-12):
        raise RadiusError("|xi| exceeds eps2 / 2")
    at, j = chart.atlas, chart.index
    r = chart.dim
    xi_p = at.pull_coords(j, xi[None, :], p)[0] if p else xi
    Minv = np.linalg.inv(at.df0_power(j - p, p))
    h = h_rel * eps2
    W = np.concatenate([np.eye(r) * h, -np.eye(r) * h])
    pts = xi_p[None, :] + W @ Minv.T
    img = at.coords(j, at.push(j - p, at.leaf(j - p, pts), p))
    return ((img[:r] - img[r:]) / (2 * h)).T


@dataclass(frozen=True)
class QuadraticErrorCheck:
    """|d f_hat^p(0) v - f_hat^p(v)| against |f_hat^p(v)|^2."""

    lhs: float
    rhs_base: float
    linear_norm: float
    image_norm: float

    @property
    def comparable(self) -> bool:
        """|d f_hat^p(0) v| <= 2 |f_hat^p(v)|."""
        return self.linear_norm <= 2.0 * self.image_norm + 1e-300


def quadratic_error_check(system, chart, v, p: int, eps2: float = ch.EPS1) -> QuadraticErrorCheck:
    """Distance between the p-step chart map and its linear part at 0."""
    ch._check_system(system, chart)
    v = np.asarray(v, dtype=float).reshape(chart.dim)
    at, j = chart.atlas, chart.index
    img = ch.hat_f_power(chart, v, p)
    nimg = float(np.linalg.norm(img))
    if nimg > eps2 * (1 + 1e-12):
        raise RadiusError("|f_hat^p(v)| exceeds eps2")
    lin = at.df0_power(j, p) @ v
    return QuadraticErrorCheck(float(np.linalg.norm(lin - img)), nimg ** 2, float(np.linalg.norm(lin)), nimg)


def near_isometry_check(system, chart, a, b, p: int, C1: float) -> tuple[float, float]:
    """``(|[F_p(a) - F_p(b)] - [a - b]|, C1 (|a-b|^2 + |b| |a-b|))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    Fa, Fb = F_p(system, chart, np.stack([a, b]), p)
    d = np.linalg.norm(a - b)
    return float(np.linalg.norm((Fa - Fb) - (a - b))), float(C1 * (d ** 2 + np.linalg.norm(b) * d))


def chart_transfer_residual(system, chart_x, eta0, u, p: int, h: float = 1e-7) -> float:
    """Residual of the chart-transfer identity between two charts on one leaf.

    With ``y = Phi_x(eta0)``, ``G_a^b`` the coordinate change from the chart
    at ``a`` to the chart at ``b`` and ``eta = G_x^y(0)``, compares
    ``F_x(u)`` with ``dG_y^x(eta) L_{y,eta}(F_y(G_x^y u) - F_y(eta))`` at order p.
    """
    r = chart_x.dim
    eta0 = np.asarray(eta0, dtype=float).reshape(r)
    u = np.asarray(u, dtype=float).reshape(r)
    y = chart_x.point(eta0[None, :])[0]
    chart_y = ch.make_chart(system, y, back=p + 4, fwd=4, radius=chart_x.radius)
    at_x, at_y = chart_x.atlas, chart_y.atlas

    def G_xy(w):
        pts = chart_x.point(np.atleast_2d(w))
        return at_y.coords(0, sysm.lift_difference(system, pts, y))

    def G_yx(w):
        pts = chart_y.point(np.atleast_2d(w))
        return at_x.coords(chart_x.index, sysm.lift_difference(system, pts, chart_x.base))

    eta = G_xy(np.zeros(r))[0]
    dG = np.empty((r, r))
    for a in range(r):
        e = np.zeros(r)
        e[a] = h
        dG[:, a] = (G_yx(eta + e)[0] - G_yx(eta - e)[0]) / (2 * h)
    Fy = F_p(system, chart_y, np.stack([G_xy(u)[0], eta]), p)
    L = L_operator(system, chart_y, eta, p, eps2=max(2 * np.linalg.norm(eta) * 1.01, 1e-300))
    rhs = dG @ (L @ (Fy[0] - Fy[1]))
    lhs = F_p(system, chart_x, u, p)
    return float(np.linalg.norm(lhs - rhs))
