"""Bowen balls on unstable leaves, their diameters and distortion ratios.

A Bowen ball of radius ``eps`` and length ``p`` at a center ``z`` is the set
of chart vectors ``u`` whose chart images ``f_hat^j(u)`` stay in the
``eps``-ball for ``j = 0..p``.  Its intersection with the basic set is
represented by a finite sample: the local trace of a sample of the basic set
on the unstable leaf.

A plain local trace has a fixed spacing, which is far too coarse for balls
that shrink like ``lambda^{-p}``.  A :class:`RefinedTrace` therefore unions
the traces on the leaves of ``f^k(z)`` (``k = 0..levels``) pulled back ``k``
steps; points pulled back from level ``k`` are ``lambda^k`` times denser,
which keeps every ball up to length ``levels`` well resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from . import charts as ch
from . import systems as sysm
from .errors import DomainError, HolonomyError, RadiusError
from .linalg import gram_volume
from .rng import parallel_map, pick_centers

RANK_TOL = 1e-8
SPAN_ORDER = 12  # approximant order used to linearize traces
SHRINK_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
SHRINK_RTOL = 1e-2  # relative sampling tolerance when comparing against rho
PAIRWISE_LIMIT = 2000


def diameter(V) -> float:
    """Euclidean diameter (max pairwise distance) of a finite point set."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n, r = V.shape
    if n < 2:
        return 0.0
    if r == 1:
        return float(V[:, 0].max() - V[:, 0].min())
    if n > PAIRWISE_LIMIT:
        try:
            V = V[ConvexHull(V).vertices]
        except Exception:  # degenerate (flat) set: fall back to all points
            pass
    return float(pdist(V).max())


def ell(V) -> float:
    """Largest norm in a finite set of vectors (0 for an empty set)."""
    V = np.asarray(V, dtype=float)
    if len(V) == 0:
        return 0.0
    return float(np.max(np.linalg.norm(V.reshape(len(V), -1), axis=1)))


# ---------------------------------------------------------------------------
# refined traces


class RefinedTrace:
    """Trace points on the leaf of ``chart.base`` gathered from ``levels + 1`` leaves.

    ``coords`` are chart coordinates at the center and ``level`` records the
    leaf each point came from.  :meth:`images` returns ``f_hat^j`` of all
    points: for a point found on the leaf of ``f^k(z)`` the images with
    ``j <= k`` are the intermediate pullback coordinates, later ones are
    pushed forward from its leaf point at ``f^k(z)``.
    """

    def __init__(self, chart: ch.UnstableChart, eps: float, parts: Sequence[tuple]):
        # parts: (k, v, ladder) with v coordinates at f^k(z) and ladder the
        # coordinates at f^{k-1}(z), ..., z
        self.chart = chart
        self.eps = float(eps)
        self._parts = list(parts)
        r = chart.dim
        if self._parts:
            self.coords = np.concatenate([lad[-1] if k else v for k, v, lad in self._parts])
            self.level = np.concatenate([np.full(len(v), k, dtype=int) for k, v, _ in self._parts])
        else:
            self.coords = np.zeros((0, r))
            self.level = np.zeros(0, dtype=int)
        self._forward = {}  # part index -> (step, displacement at f^step(z))
        self._images = {0: self.coords}
        self._members = {}

    def __len__(self) -> int:
        return len(self.coords)

    def _part_image(self, n: int, j: int) -> np.ndarray:
        k, v, lad = self._parts[n]
        if j == k:
            return v
        if j < k:
            return lad[k - 1 - j]
        at, i0 = self.chart.atlas, self.chart.index
        step, e = self._forward.get(n, (k, None))
        if e is None or step > j:
            step, e = k, at.leaf(i0 + k, v)
        e = at.push(i0 + step, e, j - step)
        self._forward[n] = (j, e)
        return at.coords(i0 + j, e)

    def images(self, j: int) -> np.ndarray:
        """Chart coordinates at ``f^j(z)`` of ``f^j(Phi_z(u))`` for every point."""
        if j < 0:
            raise DomainError("j must be >= 0")
        if j not in self._images:
            self._images[j] = np.concatenate([self._part_image(n, j) for n in range(len(self._parts))])
        return self._images[j]

    def members(self, p: int, eps: float) -> np.ndarray:
        """Boolean mask of points with ``|f_hat^j(u)| <= eps`` for ``j <= p``."""
        key = (p, eps)
        if key not in self._members:
            keep = np.ones(len(self.coords), dtype=bool)
            for j in range(p + 1):
                keep &= np.linalg.norm(self.images(j), axis=1) <= eps
            self._members[key] = keep
        return self._members[key]


def refined_trace(chart: ch.UnstableChart, sample, eps: float, levels: int,
                  trace_tol: Optional[float] = None, slab: Optional[float] = None) -> RefinedTrace:
    """Union over ``k <= levels`` of the trace at ``f^k(z)`` pulled back ``k`` steps."""
    if levels < 0:
        raise DomainError("levels must be >= 0")
    at, i0 = chart.atlas, chart.index
    parts = []
    for k in range(levels + 1):
        tr = ch.local_trace(chart.shifted(k), sample, eps, trace_tol, slab)
        if len(tr.coords) == 0:
            continue
        ladder = at.pull_coords(i0 + k, tr.coords, k, ladder=True) if k else []
        parts.append((k, tr.coords, ladder))
    return RefinedTrace(chart, eps, parts)


def _atlas_for(system, z, levels: int, p_max: int) -> ch.Atlas:
    return ch.Atlas(system, z, back=2, fwd=levels + p_max + 2)


# ---------------------------------------------------------------------------
# Bowen balls


@dataclass(frozen=True, eq=False)
class BowenSample:
    """Sampled Bowen ball on the unstable leaf of ``center``."""

    center: np.ndarray
    p: int
    eps: float
    members: np.ndarray  # chart vectors, shape (n, unstable_dim)
    diam: float
    ell: float
    diam_prime: Optional[float] = None

    def __len__(self) -> int:
        return len(self.members)


def ball_from_trace(refined: RefinedTrace, p: int, eps: float, prime=None) -> BowenSample:
    """Bowen ball of length ``p`` and radius ``eps`` cut out of a refined trace."""
    if eps > refined.eps * (1 + 1e-12):
        raise RadiusError("eps exceeds the radius the trace was gathered at")
    mem = refined.coords[refined.members(p, eps)]
    dp = prime.diam(mem) if prime is not None else None
    return BowenSample(refined.chart.base, p, eps, mem, diameter(mem), ell(mem), dp)


def bowen_ball(system, chart_z: ch.UnstableChart, lambda_sample, p: int, eps: float,
               levels: Optional[int] = None, refined: Optional[RefinedTrace] = None,
               eps2: float = ch.EPS1, slab: Optional[float] = None) -> BowenSample:
    """Sampled Bowen ball ``{u : |f_hat^j(u)| <= eps, j = 0..p}`` at the chart center.

    ``levels`` (default ``p``) sets how many leaves feed the refined trace;
    an already gathered ``refined`` trace can be passed instead.
    """
    ch._check_system(system, chart_z)
    if p < 0:
        raise DomainError("p must be >= 0")
    if eps > eps2 * (1 + 1e-12) or eps <= 0:
        raise RadiusError(f"eps must lie in (0, {eps2}]")
    if refined is None:
        refined = refined_trace(chart_z, lambda_sample, eps, p if levels is None else levels, slab=slab)
    return ball_from_trace(refined, p, eps)


# ---------------------------------------------------------------------------
# distortion ratios


@dataclass(frozen=True)
class DistortionRow:
    system: str
    center_ix: int
    p: int
    eps: float
    delta: float
    diam_eps: float
    diam_delta: float
    ratio: float
    ell_eps: float
    ell_delta: float
    defined: bool


DISTORTION_COLUMNS = tuple(DistortionRow.__dataclass_fields__)


@dataclass(frozen=True)
class DistortionResult:
    R_hat: float
    per_center_max: np.ndarray
    rows: list
    coverage: float
    traces: tuple = field(default=(), repr=False, compare=False)

    def max_over(self, p_lo: int, p_hi: int) -> float:
        """Largest defined ratio with ``p_lo <= p <= p_hi``."""
        vals = [r.ratio for r in self.rows if r.defined and p_lo <= r.p <= p_hi]
        return max(vals) if vals else math.nan


def _center_traces(system, sample, eps, p_max, centers, seed, workers, levels, slab):
    idx, pts = pick_centers(sample.points, centers, seed)
    lv = p_max if levels is None else levels

    def one(z):
        chart = _atlas_for(system, z, lv, p_max).chart(0)
        return refined_trace(chart, sample, eps, lv, slab=slab)

    return idx, parallel_map(one, list(pts), workers)


def _check_radii(delta, eps, eps2=ch.EPS1):
    if not (0 < delta <= eps <= eps2 * (1 + 1e-12)):
        raise RadiusError(f"need 0 < delta <= eps <= {eps2}")


def distortion_R(system, lambda_sample, delta: float, eps: float, p_max: int, centers: int, seed: int,
                 workers: Optional[int] = None, levels: Optional[int] = None,
                 slab: Optional[float] = None) -> DistortionResult:
    """Ratios diam(B(p, eps)) / diam(B(p, delta)) over sampled centers and p <= p_max.

    Cells with a degenerate delta-ball (fewer than two members) are marked
    undefined and excluded; ``coverage`` is the defined fraction.
    """
    _check_radii(delta, eps)
    if centers < 1 or p_max < 0:
        raise DomainError("need centers >= 1 and p_max >= 0")
    idx, traces = _center_traces(system, lambda_sample, eps, p_max, centers, seed, workers, levels, slab)
    rows = []
    per_center = np.zeros(len(idx))
    for c, (ix, tr) in enumerate(zip(idx, traces)):
        for p in range(p_max + 1):
            be = ball_from_trace(tr, p, eps)
            bd = ball_from_trace(tr, p, delta)
            defined = bd.diam > 0
            ratio = be.diam / bd.diam if defined else math.nan
            rows.append(DistortionRow(system.label, int(ix), p, float(eps), float(delta), be.diam, bd.diam,
                                      ratio, be.ell, bd.ell, bool(defined)))
            if defined:
                per_center[c] = max(per_center[c], ratio)
    ok = [r.ratio for r in rows if r.defined]
    R_hat = max(ok) if ok else math.nan
    return DistortionResult(R_hat, per_center, rows, len(ok) / len(rows), tuple(traces))


@dataclass(frozen=True)
class ShrinkResult:
    delta: float
    warning: bool
    grid: tuple
    worst_ratio: tuple  # max over (z, p) of diam(delta)/diam(eps) per grid value


def shrink_delta(system, lambda_sample, eps: float, rho: float, search_grid: Optional[Sequence[float]] = None,
                 p_max: int = 12, centers: int = 16, seed: int = 0, workers: Optional[int] = None,
                 rtol: float = SHRINK_RTOL, levels: Optional[int] = None,
                 slab: Optional[float] = None) -> ShrinkResult:
    """Largest grid delta with max diam(B(p, delta)) / diam(B(p, eps)) <= rho.

    The default grid is ``eps * (0.05, 0.10, ..., 0.95)``.  Ratios are
    compared with ``rho * (1 + rtol)`` to absorb the sampling resolution of
    the diameters.  If no grid value qualifies the smallest one is returned
    with ``warning=True``.
    """
    if not 0 < rho < 1:
        raise DomainError("rho must lie in (0, 1)")
    _check_radii(eps, eps)
    idx, traces = _center_traces(system, lambda_sample, eps, p_max, centers, seed, workers, levels, slab)
    return shrink_from_traces(traces, eps, rho, search_grid, p_max, rtol)


def shrink_from_traces(traces: Sequence[RefinedTrace], eps: float, rho: float,
                       search_grid: Optional[Sequence[float]] = None, p_max: int = 12,
                       rtol: float = SHRINK_RTOL) -> ShrinkResult:
    """:func:`shrink_delta` on refined traces that are already gathered."""
    if not 0 < rho < 1:
        raise DomainError("rho must lie in (0, 1)")
    grid = tuple(sorted(round(eps * g, 12) for g in SHRINK_GRID) if search_grid is None else sorted(search_grid))
    worst = []
    for d in grid:
        w = 0.0
        for tr in traces:
            for p in range(p_max + 1):
                de = ball_from_trace(tr, p, eps).diam
                if de > 0:
                    w = max(w, ball_from_trace(tr, p, d).diam / de)
        worst.append(w)
    good = [d for d, w in zip(grid, worst) if w <= rho * (1 + rtol)]
    if good:
        return ShrinkResult(max(good), False, grid, tuple(worst))
    return ShrinkResult(grid[0], True, grid, tuple(worst))


# ---------------------------------------------------------------------------
# linearized traces and their span


@dataclass(frozen=True, eq=False)
class SpanEstimate:
    """Span of a linearized local trace with a greedily chosen basis."""

    chart: ch.UnstableChart
    delta: float
    dim: int
    basis: np.ndarray  # rows u_1..u_m (linearized vectors)
    volume: float
    sources: np.ndarray  # trace vectors whose images are the basis
    singular_values: np.ndarray


def greedy_basis(V: np.ndarray, m: int) -> np.ndarray:
    """Row indices of ``m`` vectors of ``V`` chosen greedily for maximal volume."""
    R = np.array(V, dtype=float, copy=True)
    chosen = []
    for _ in range(m):
        i = int(np.argmax(np.linalg.norm(R, axis=1)))
        chosen.append(i)
        q = R[i] / np.linalg.norm(R[i])
        R = R - np.outer(R @ q, q)
    return np.array(chosen, dtype=int)


def span_estimate(system, chart_x: ch.UnstableChart, lambda_sample, delta: float,
                  order: int = SPAN_ORDER, eps2: float = ch.EPS1) -> SpanEstimate:
    """Numerical rank and a maximal-volume basis of ``F(trace(delta))``."""
    from .linearization import F_p

    ch._check_system(system, chart_x)
    if delta > eps2 * (1 + 1e-12):
        raise RadiusError("delta exceeds eps2")
    tr = ch.local_trace(chart_x, lambda_sample, delta)
    if len(tr.coords) == 0:
        raise DomainError("empty local trace")
    images = F_p(system, chart_x, tr.coords, order)
    sv = np.linalg.svd(images, compute_uv=False)
    m = int(np.sum(sv > RANK_TOL * sv[0])) if sv[0] > 0 else 0
    if m == 0:
        raise DomainError("linearized trace has rank zero")
    pick = greedy_basis(images, m)
    basis = images[pick]
    return SpanEstimate(chart_x, float(delta), m, basis, gram_volume(basis.T), tr.coords[pick], sv)


# ---------------------------------------------------------------------------
# basis-volume bound for linearized Bowen sets


@dataclass(frozen=True)
class SpanDistortionResult:
    D_bound: float
    empirical_max: float
    b: float
    m: int
    D_analytic: float
    ratios: tuple  # (neighbor index, p, ell_eps, ell_delta, ratio)

    @property
    def holds(self) -> bool:
        """Bound holds up to the sampling resolution of the ell estimates.

        Sampled ell values underestimate the true ones by up to a trace
        spacing, which biases the ratio of two of them upward by a few 1e-4
        on the shipped grids; ``SHRINK_RTOL`` absorbs that bias.
        """
        return self.empirical_max <= self.D_bound * (1 + SHRINK_RTOL)

    @property
    def strict(self) -> bool:
        """The bound without sampling slack."""
        return self.empirical_max <= self.D_bound * (1 + 1e-12)


def linearized_ells(system, chart_y: ch.UnstableChart, lambda_sample, radii: Sequence[float], p_max: int,
                    order: int = SPAN_ORDER, slab: Optional[float] = None) -> np.ndarray:
    """ell of linearized trace sets at ``f^{-p}(y)`` for each radius and ``p = 1..p_max``.

    Uses the conjugacy ``F_y o f_hat^p = df_hat^p(0) o F_{f^{-p} y}``: each
    trace vector ``w`` at ``y`` (radius ``2 max(radii)``) with
    ``|F_y(w)| <= r`` and ``|f_hat^{-p}(w)| <= r`` gives the element
    ``df_hat^p(0)^{-1} F_y(w)`` of the linearized Bowen set of radius ``r``.
    Returns an array of shape ``(len(radii), p_max)``.
    """
    from .linearization import F_p

    at, j = chart_y.atlas, chart_y.index
    out = np.zeros((len(radii), p_max))
    tr = ch.local_trace(chart_y, lambda_sample, min(2 * max(radii), chart_y.radius), slab=slab)
    if len(tr.coords) == 0 or p_max < 1:
        return out
    W = tr.coords
    Fw = F_p(system, chart_y, W, order)
    fn = np.linalg.norm(Fw, axis=1)
    ladder = at.pull_coords(j, W, p_max, ladder=True)
    for p in range(1, p_max + 1):
        bn = np.linalg.norm(ladder[p - 1], axis=1)
        M = at.df0_power(j - p, p)
        for a, r in enumerate(radii):
            keep = (fn <= r) & (bn <= r)
            if keep.any():
                out[a, p - 1] = ell(np.linalg.solve(M, Fw[keep].T).T)
    return out


def span_distortion_bound(system, chart_x: ch.UnstableChart, neighbors: Sequence[ch.UnstableChart],
                          lambda_sample, delta: float, eps: float, p_max: int,
                          span: Optional[SpanEstimate] = None, order: int = SPAN_ORDER,
                          slab: Optional[float] = None) -> SpanDistortionResult:
    """Bound ``D = m eps b`` on ell-ratios of linearized Bowen sets near ``x``.

    ``b`` is the largest inverse smallest singular value of the basis
    transported to each neighbor (holonomy, then the neighbor's
    linearization).  The empirical maximum is taken over neighbors and
    ``1 <= p <= p_max``; neighbor charts must carry ``p_max`` past steps.
    """
    from .holonomy import stable_holonomy
    from .linearization import F_p

    _check_radii(delta, eps)
    if span is None:
        span = span_estimate(system, chart_x, lambda_sample, delta, order)
    m = span.dim
    if not span.volume > 0:
        raise DomainError("degenerate basis volume")
    inv_sig = []
    for y in neighbors:
        H = np.array([stable_holonomy(system, chart_x, y, s) for s in span.sources])
        B = F_p(system, y, H, order)
        sv = np.linalg.svd(B, compute_uv=False)
        if not sv[-1] > 0:
            raise DomainError("transported basis is degenerate")
        inv_sig.append(1.0 / sv[m - 1])
    b = max(inv_sig)
    norms = np.linalg.norm(span.basis, axis=1)
    b_analytic = (math.sqrt(m) * norms.max()) ** (m - 1) / (span.volume / 2)
    ratios = []
    worst = 0.0
    for n, y in enumerate(neighbors):
        ells = linearized_ells(system, y, lambda_sample, (eps, delta), p_max, order, slab)
        for p in range(1, p_max + 1):
            le, ld = ells[0, p - 1], ells[1, p - 1]
            if ld > 0:
                r = le / ld
                worst = max(worst, r)
                ratios.append((n, p, le, ld, r))
    return SpanDistortionResult(m * eps * b, worst, b, m, m * eps * b_analytic, tuple(ratios))


def neighbor_charts(system, x, count: int, spacing: float, p_max: int, n: int = 20) -> list:
    """Charts at ``count`` points on the stable leaf of ``x`` (distances ``spacing * i``)."""
    from .holonomy import stable_neighbor

    out = []
    for i in range(1, count + 1):
        d = spacing * i * (1 if i % 2 else -1)
        y = stable_neighbor(system, x, d, n)
        out.append(ch.Atlas(system, y, back=p_max + 2, fwd=4).chart(0))
    return out
