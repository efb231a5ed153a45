"""Dominated splittings of the unstable bundle and finite-time spectra.

For a system whose unstable bundle splits as ``E1 + E2`` (slow + fast) the
splitting is recovered by power iteration:

* ``E2`` -- the fastest subbundle -- by pushing a frame forward along the
  orbit (re-orthonormalizing after every step);
* ``E1`` -- the slowest subbundle -- by iterating the *inverse* cocycle,
  restricted to the unstable frame, from the far future back to ``x``.

Everything is expressed in the chart coordinates of an :class:`Atlas` (the
orthonormal unstable frames), so that the inverse cocycle never sees the
stable directions, which it would expand.

The module also provides the max-component norm ``||u||' = max(||u1||, ||u2||)``,
the projection along fast unstable leaves onto the slow direction, the
slow-component Bowen sets and the associated constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import charts as ch
from . import systems as sysm
from .errors import BracketError, DominationError, DomainError, PinchViolation, RadiusError
from .linalg import Subspace, mgs, push_frame, subspace_angle

RATE_WINDOW = 10
FAST_LEAF_DEPTH = 20  # base steps used to straighten fast unstable leaves
RATE_SLACK = 0.02  # relative slack used when turning measured rates into lambda_1, mu_2


# ---------------------------------------------------------------------------
# helpers


def _weight(system, U: np.ndarray) -> np.ndarray:
    """Norm in which unstable vectors are measured for rate estimates.

    For the solenoid the unstable leaves are graphs over the angle, and the
    angle component expands by exactly 2 per step; measuring unstable
    vectors by their angle component makes the rates exact.  All other
    systems use the Euclidean norm (weight 1).
    """
    if system.topology == "solid_torus":
        return np.abs(U[..., 0, 0])
    return np.ones(U.shape[:-2])


def _orient(G: np.ndarray) -> np.ndarray:
    """Fix the sign of each column: its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(G), axis=0)
    signs = np.sign(G[idx, np.arange(G.shape[1])])
    signs[signs == 0] = 1.0
    return G * signs


def _window_rates(factors: Sequence[np.ndarray], window: int, per_step: float):
    """(min log-conorm, max log-norm) over consecutive windows, per base step."""
    lo, hi = math.inf, -math.inf
    n = len(factors)
    if n < window:
        raise DomainError("orbit segment shorter than the rate window")
    for start in range(0, n - window + 1):
        M = np.eye(factors[0].shape[0])
        for F in factors[start:start + window]:
            M = F @ M
        s = np.linalg.svd(M, compute_uv=False)
        lo = min(lo, math.log(s[-1]) / (window * per_step))
        hi = max(hi, math.log(s[0]) / (window * per_step))
    return lo, hi


# ---------------------------------------------------------------------------
# splitting estimate


@dataclass(frozen=True, eq=False)
class SplittingEstimate:
    """Slow/fast splitting of the unstable space at ``chart.base``.

    ``c1``/``c2`` hold the two subbundles in chart coordinates (columns in
    the chart's orthonormal unstable frame); ``E1``/``E2`` are the same
    subspaces in the ambient space.  Rates are per base step.
    """

    chart: ch.UnstableChart
    E1: Subspace
    E2: Optional[Subspace]
    rates1: tuple
    rates2: Optional[tuple]
    horizon: int
    c1: np.ndarray = field(repr=False)
    c2: Optional[np.ndarray] = field(repr=False)
    slow_factors: tuple = field(repr=False, default=())
    slow_frames: Optional[np.ndarray] = field(repr=False, default=None)  # c1 at x_0 .. x_{2h}

    def slow_frame(self, j: int) -> np.ndarray:
        """Slow coordinates c1 at x_j (backward iteration for j < 0)."""
        if 0 <= j < len(self.slow_frames):
            return self.slow_frames[j]
        if j < 0:
            at = self.chart.atlas
            c = self.slow_frames[0]
            for i in range(0, j, -1):
                c, _ = mgs(np.linalg.solve(at.df0(i - 1), c))
            return _orient(c)
        raise IndexError("slow frame index beyond the splitting horizon")

    def fast_frame(self, j: int) -> Optional[np.ndarray]:
        if self.c2 is None:
            return None
        return self.c2  # the fast bundle is the tail of every pushed frame

    @property
    def dim1(self) -> int:
        return self.E1.rank

    @property
    def dominated(self) -> bool:
        return self.rates2 is not None and self.rates1[1] < self.rates2[0]

    @property
    def angle(self) -> float:
        """Angle between E1 and E2 (pi/2 for a degenerate split)."""
        if self.E2 is None:
            return math.pi / 2
        G = self.E1.basis.T @ self.E2.basis
        s = np.linalg.svd(G, compute_uv=False)
        return float(np.arccos(np.clip(s.max(), -1.0, 1.0)))


def fast_rank(system) -> int:
    """Dimension of the fast subbundle declared by the system (0 when none)."""
    return 1 if system.name == "prod4" else 0


def estimate_splitting(system, x, horizon: int = 60, r2: Optional[int] = None,
                       window: int = RATE_WINDOW, radius: float = ch.EPS0) -> SplittingEstimate:
    """Recover ``E1 + E2`` at ``x`` from ``horizon`` steps of past and future.

    ``r2`` is the fast dimension (defaults to the system's declared one).
    Rates come from windows of ``window`` steps over the second half of the
    horizon (forward in time), as min log-conorm / max log-norm per step.
    """
    if horizon < 10:
        raise DomainError("horizon must be >= 10")
    r = system.unstable_dim
    r2 = fast_rank(system) if r2 is None else r2
    if not 0 <= r2 < r:
        raise DomainError("fast rank must lie in [0, unstable_dim)")
    r1 = r - r2
    at = ch.Atlas(system, x, back=horizon, fwd=2 * horizon)
    chart = at.chart(0, radius)
    # slow coordinates: inverse cocycle from x_{2h} down to x_0
    C = np.empty((2 * horizon + 1, r, r1))
    G = sysm.initial_frame(system, r)[:r, :r1] if r1 < r else np.eye(r)
    G, _ = mgs(G)
    for j in range(2 * horizon, -1, -1):
        if j < 2 * horizon:
            G, _ = push_frame(np.linalg.inv(at.df0(j)), G)
        C[j] = _orient(G)
    c1 = C[0]
    E1 = Subspace.span(at.frame(0) @ c1)
    # fast coordinates: the last r2 columns of the forward-pushed frame
    c2 = None
    E2 = None
    if r2:
        c2 = np.zeros((r, r2))
        c2[r1:, :] = np.eye(r2)
        E2 = Subspace(at.frame(0)[:, r1:])
    per_step = float(system.block)
    lo = horizon // 2
    # restricted slow cocycle: matrices of df_hat(0) between the slow frames
    slow = []
    for j in range(0, 2 * horizon):
        A = C[j + 1].T @ at.df0(j) @ C[j]
        slow.append(A)
    if r2 == 0:
        w = _weight(system, at.U[at._i(0):at._i(2 * horizon) + 1])
        slow = [slow[j] * (w[j + 1] / w[j]) for j in range(2 * horizon)]
    rates1 = _window_rates(slow[lo:horizon], min(window, horizon - lo), per_step)
    rates2 = None
    if r2:
        fast = [at.df0(j)[r1:, r1:] for j in range(0, horizon)]
        rates2 = _window_rates(fast[lo:horizon], min(window, horizon - lo), per_step)
    return SplittingEstimate(chart, E1, E2, rates1, rates2, int(horizon), c1, c2, tuple(slow), C)


def require_domination(est: SplittingEstimate) -> None:
    if not est.dominated:
        raise DominationError(f"no domination: beta1={est.rates1[1]:.4g}, "
                              f"alpha2={None if est.rates2 is None else est.rates2[0]}")


def finite_time_rates(system, x, horizon: int = 60, window: int = RATE_WINDOW) -> tuple:
    """(alpha_x, beta_x) of the slow unstable cocycle at ``x``, per base step."""
    return estimate_splitting(system, x, horizon, window=window).rates1


@dataclass(frozen=True)
class PinchRow:
    center_ix: int
    alpha_hat: float
    beta_hat: float
    pinch_margin: float
    verdict: str


def pinching_report(system, centers: np.ndarray, horizon: int = 60, alpha: float = 0.5,
                    workers: Optional[int] = None) -> list:
    """Per-center finite-time rates of the slow bundle and the margin 2 alpha - beta."""
    from .rng import parallel_map

    def row(item):
        i, x = item
        a, b = finite_time_rates(system, x, horizon)
        margin = 2 * a - b
        return PinchRow(i, a, b, margin, "pass" if margin >= alpha else "fail")

    return parallel_map(row, list(enumerate(centers)), workers)


# ---------------------------------------------------------------------------
# the max-component norm


@dataclass(frozen=True, eq=False)
class PrimeNormContext:
    """Oblique projectors (chart coordinates at x_index) onto E1 along E2 and back."""

    splitting: SplittingEstimate
    P1: np.ndarray
    P2: np.ndarray
    c1: np.ndarray = field(repr=False)
    c2: Optional[np.ndarray] = field(repr=False)
    index: int = 0

    @classmethod
    def from_splitting(cls, est: SplittingEstimate, j: int = 0) -> "PrimeNormContext":
        c1 = est.slow_frame(j)
        c2 = est.fast_frame(j)
        r = c1.shape[0]
        if c2 is None:
            return cls(est, np.eye(r), np.zeros((r, r)), c1, None, j)
        B = np.concatenate([c1, c2], axis=1)
        Binv = np.linalg.inv(B)
        r1 = c1.shape[1]
        return cls(est, c1 @ Binv[:r1], c2 @ Binv[r1:], c1, c2, j)

    def components(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return u @ self.P1.T, u @ self.P2.T

    def slow_coordinate(self, u) -> np.ndarray:
        """Coordinates of the E1 component in the orthonormal basis ``c1``."""
        u1, _ = self.components(u)
        return u1 @ self.c1

    def fast_coordinate(self, u) -> np.ndarray:
        _, u2 = self.components(u)
        if self.c2 is None:
            return np.zeros(np.shape(u)[:-1] + (0,))
        return u2 @ self.c2

    def norm(self, u) -> np.ndarray:
        u1, u2 = self.components(u)
        return np.maximum(np.linalg.norm(u1, axis=-1), np.linalg.norm(u2, axis=-1))

    def diam(self, U) -> float:
        """Diameter of a finite set under the max-component norm."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if len(U) < 2:
            return 0.0
        a = _diameter(self.slow_coordinate(U))
        b = _diameter(self.fast_coordinate(U)) if self.c2 is not None else 0.0
        return max(a, b)


def _diameter(V: np.ndarray) -> float:
    """Euclidean diameter of a finite point set (max pairwise distance)."""
    from .bowen import diameter

    return diameter(V)


def prime_context_along(est: SplittingEstimate, j: int) -> PrimeNormContext:
    """Max-component norm at x_j along the splitting's atlas."""
    return PrimeNormContext.from_splitting(est, j)


# ---------------------------------------------------------------------------
# projection along fast leaves


def fast_leaf(est: SplittingEstimate, j: int, w, depth: Optional[int] = None):
    """Parametrization ``s -> chart coordinates at x_j`` of the fast leaf through Phi_{x_j}(w).

    The segment ``w' + s c2 / |d f_hat^n(0) c2|`` at ``x_{j-n}`` (``w'`` the
    pullback of ``w``) is pushed forward ``n`` steps, which straightens it
    onto the fast foliation; ``s`` is then, to first order, the fast
    coordinate at ``x_j`` relative to ``w``.
    """
    at = est.chart.atlas
    n = max(1, math.ceil((FAST_LEAF_DEPTH if depth is None else depth) / est.chart.system.block))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    base = at.pull_coords(j, w, n)[0]
    c2 = est.fast_frame(j - n)[:, 0]
    scale = np.linalg.norm(at.df0_power(j - n, n) @ c2)

    def leaf_points(s):
        seg = base[None, :] + (np.asarray(s, dtype=float) / scale)[:, None] * c2[None, :]
        return at.coords(j, at.push(j - n, at.leaf(j - n, seg), n))

    return leaf_points


def project_u1(system, est: SplittingEstimate, u, j: int = 0, eps1: float = ch.EPS1,
               depth: Optional[int] = None) -> np.ndarray:
    """Slow coordinate of the bracket of ``x_j`` with ``Phi_{x_j}(u)``.

    The fast leaf through ``Phi(u)`` is intersected with the slow chart line
    ``R c1`` through the base point; the result is the ``c1``-coordinate of
    the intersection.  For systems affine in the cover the fast leaves are
    straight and this is the exact oblique projection.
    """
    ch._check_system(system, est.chart)
    ctx = prime_context_along(est, j)
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) > eps1 * (1 + 1e-12):
        raise RadiusError("|u| exceeds eps1")
    if est.c2 is None:
        return ctx.slow_coordinate(u)
    if system.linear:
        return ctx.slow_coordinate(u)
    # Newton on the fast parameter s: the fast-component of the leaf point vanishes
    leaf_points = fast_leaf(est, j, u, depth)
    s = -float(ctx.fast_coordinate(u)[0])
    h = 1e-7 * max(abs(s), 1e-12) + 1e-14
    for _ in range(40):
        pts = leaf_points(np.array([s - h, s, s + h]))
        g = ctx.fast_coordinate(pts)[:, 0]
        dg = (g[2] - g[0]) / (2 * h)
        if dg == 0:
            break
        step = g[1] / dg
        s -= step
        if abs(step) <= 1e-15 * max(1.0, abs(s)) + 1e-18:
            break
    else:
        raise BracketError("fast leaf did not meet the slow direction")
    q = leaf_points(np.array([s]))[0]
    if np.linalg.norm(q) > eps1:
        raise BracketError("bracket point lies outside the chart")
    return ctx.slow_coordinate(q)


def projection_equivariance(system, est: SplittingEstimate, u, depth: Optional[int] = None) -> float:
    """|pi at x_{-1} of f_hat^{-1}(u) - slow coordinate of f_hat^{-1}(pi-bracket point)|.

    Compares the two paths "pull back, then project" and "project, then pull
    back" (the bracket point is pulled back as a point of the leaf).
    """
    at = est.chart.atlas
    u = np.asarray(u, dtype=float)
    ctx1 = prime_context_along(est, -1)
    # path 1
    v = at.pull_coords(0, u[None, :], 1)[0]
    a = project_u1(system, est, v, j=-1, depth=depth)
    # path 2: the bracket point (on the slow chart line at x_0), pulled back
    b1 = project_u1(system, est, u, j=0, depth=depth)
    q = est.c1 @ np.atleast_1d(b1)
    qb = at.pull_coords(0, q[None, :], 1)[0]
    b = ctx1.slow_coordinate(qb)
    return float(np.linalg.norm(np.atleast_1d(a) - np.atleast_1d(b)))


# ---------------------------------------------------------------------------
# slow-component Bowen sets


@dataclass(frozen=True)
class SlowSetResult:
    """Slow components of a max-norm Bowen set and the two diameters."""

    p: int
    eps: float
    slow: np.ndarray  # slow coordinates of the members
    diam_prime_b1: float
    diam_prime_full: float
    count: int

    @property
    def below_full(self) -> bool:
        """The slow set is never larger than the full set."""
        return self.diam_prime_b1 <= self.diam_prime_full * (1 + 1e-12) + 1e-300

    @property
    def above_full(self) -> bool:
        """The slow set is at least as large as the full set."""
        return self.diam_prime_full <= self.diam_prime_b1 * (1 + 1e-12) + 1e-300


def check_b1_set(system, est: SplittingEstimate, refined, p: int, eps: float) -> SlowSetResult:
    """Members v of the refined trace with ||f_hat^j(v)||' <= eps for j <= p.

    ``refined`` is a :class:`bowen.RefinedTrace` at the splitting's chart.
    Returns the slow components of the members and the max-component
    diameters of the slow set and of the full member set.
    """
    ch._check_system(system, est.chart)
    if p < 0:
        raise DomainError("p must be >= 0")
    ctxs = [prime_context_along(est, j) for j in range(0, p + 1)]
    keep = np.ones(len(refined.coords), dtype=bool)
    for j in range(0, p + 1):
        keep &= ctxs[j].norm(refined.images(j)) <= eps
    members = refined.coords[keep]
    ctx = ctxs[0]
    slow = ctx.slow_coordinate(members)
    b1 = _diameter(slow) if len(members) > 1 else 0.0
    full = ctx.diam(members)
    return SlowSetResult(p, eps, slow, b1, full, int(keep.sum()))


def omega_eps(traces: Sequence, contexts: Sequence[PrimeNormContext]) -> tuple[float, int]:
    """min over centers of the largest slow component in the local trace.

    Centers with an empty trace are skipped; returns ``(omega, n_used)``.
    """
    best = math.inf
    used = 0
    for tr, ctx in zip(traces, contexts):
        if len(tr.coords) == 0:
            continue
        used += 1
        best = min(best, float(np.max(np.linalg.norm(ctx.components(tr.coords)[0], axis=1))))
    if used == 0:
        return 0.0, 0
    return best, used


def p_eps(eps: float, omega: float, mu2: float, lambda1: float) -> int:
    """Least integer p >= 1 with (mu2 / lambda1)^p >= eps / omega."""
    if not mu2 > lambda1 > 0:
        raise DominationError("need mu2 > lambda1 > 0")
    if omega <= 0:
        raise DomainError("omega must be positive")
    target = eps / omega
    ratio = mu2 / lambda1
    p = max(1, math.ceil(math.log(target) / math.log(ratio) - 1e-12)) if target > 1 else 1
    while ratio ** p < target:
        p += 1
    while p > 1 and ratio ** (p - 1) >= target:
        p -= 1
    return p


def domination_constants(est: SplittingEstimate, slack: float = RATE_SLACK) -> tuple[float, float]:
    """(lambda_1, mu_2) per block step, squeezed inside the measured rates."""
    require_domination(est)
    k = est.chart.system.block
    lam1 = math.exp(est.rates1[1] * k) * (1 + slack)
    mu2 = math.exp(est.rates2[0] * k) * (1 - slack)
    if not mu2 > lam1:
        raise DominationError("rate gap too small for the slack")
    return lam1, mu2


# ---------------------------------------------------------------------------
# linearization along the slow bundle


def linearize_E1(system, est: SplittingEstimate, u1, p: int, max_norm: Optional[float] = None) -> np.ndarray:
    """Order-p linearization restricted to the slow bundle.

    The slow vector ``u1`` (coordinates in ``c1``) is pulled back ``p``
    steps as a chart point, its slow coordinate at ``x_{-p}`` is taken, and
    the restricted derivative cocycle ``d f_hat^p(0)|E1`` is applied.
    """
    ch._check_system(system, est.chart)
    at = est.chart.atlas
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    if p == 0:
        return u1
    ctx_p = prime_context_along(est, -p)
    v = at.pull_coords(0, (est.c1 @ u1)[None, :], p)[0]
    w = ctx_p.slow_coordinate(v)
    # restricted cocycle between the transported slow frames
    c = ctx_p.c1
    M = np.eye(len(u1))
    for i in range(-p, 0):
        c_next, K = push_frame(at.df0(i), c)
        M = K @ M
        c = c_next
    # align the final frame with c1 at x_0 (same line, possibly opposite sign)
    M = (est.c1.T @ c) @ M
    out = M @ w
    if max_norm is not None and np.linalg.norm(out) > max_norm:
        raise PinchViolation("slow linearization left its range")
    return out


def linearize_E1_ladder(system, est: SplittingEstimate, U1, p_max: int) -> np.ndarray:
    """Slow linearizations of orders ``0..p_max`` for a batch of slow vectors.

    Same construction as :func:`linearize_E1`, sharing one pullback ladder
    per batch; returns shape ``(p_max + 1, n, dim1)``.
    """
    ch._check_system(system, est.chart)
    at = est.chart.atlas
    U1 = np.atleast_2d(np.asarray(U1, dtype=float))
    out = np.empty((p_max + 1,) + U1.shape)
    out[0] = U1
    if p_max == 0:
        return out
    ladder = at.pull_coords(0, U1 @ est.c1.T, p_max, ladder=True)
    for p in range(1, p_max + 1):
        ctx_p = prime_context_along(est, -p)
        w = ctx_p.slow_coordinate(ladder[p - 1])
        c = ctx_p.c1
        M = np.eye(U1.shape[1])
        for i in range(-p, 0):
            c_next, K = push_frame(at.df0(i), c)
            M = K @ M
            c = c_next
        M = (est.c1.T @ c) @ M
        out[p] = w @ M.T
    return out
