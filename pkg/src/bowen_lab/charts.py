"""Unstable-manifold charts, chart maps and local traces.

A chart at ``x`` is parametrized by vectors ``u`` of the unstable frame
``E^u(x)`` (an orthonormal basis).  The chart point ``Phi_x(u)`` is the point
of the local unstable leaf of ``x`` whose component along ``E^u(x)`` -- in the
oblique decomposition ``R^d = E^u(x) + E^s(x)`` -- equals ``u``.  For systems
that are affine in the universal cover the leaf is the affine plane
``x + frame u``; for the perturbed systems the leaf is obtained by pushing a
flat unstable disc forward from ``f^{-n}(x)`` and solving for the parameter by
Newton, which makes the chart maps exactly equivariant
(``Phi_{f x}(f_hat(u)) = f(Phi_x(u))``).

All chart computations go through an :class:`Atlas`: an orbit segment of the
base point carrying unstable/stable frames at every point.  Displacements
from the orbit are propagated with the systems' displacement maps, so chart
coordinates keep full relative precision even after many pullbacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import systems as sysm
from .errors import DomainError, RadiusError
from .linalg import Subspace, push_frame

EPS0 = 0.2
EPS1 = 0.1
FRAME_WARMUP = 40  # base steps used to converge frames
LEAF_DEPTH = 12  # base steps used to straighten unstable leaves
TRACE_TOL_TORUS = 1e-6
RESEAT_GROWTH = 1e4  # stable-direction growth tolerated before re-seating


class Atlas:
    """Orbit segment ``x_j = f^j(x)``, ``-back <= j <= fwd``, with frames.

    ``U[j]`` is an orthonormal basis of the unstable space at ``x_j``,
    pushed forward along the orbit (so ``Df(x_j) U[j] = U[j+1] K[j]``);
    ``S[j]`` is an orthonormal basis of the stable space obtained by pulling
    a frame back from the far future.  ``K[j]`` is the matrix of
    ``d f_hat_{x_j}(0)`` in chart coordinates.
    """

    def __init__(self, system, x, back: int = 16, fwd: int = 16):
        self.system = system
        k = system.block
        self.extra = max(2, math.ceil(FRAME_WARMUP / k))
        self.leaf_depth = 0 if system.linear else max(1, math.ceil(LEAF_DEPTH / k))
        self.back, self.fwd = int(back), int(fwd)
        lo = self.back + self.extra
        hi = self.fwd + self.extra
        x = np.asarray(x, dtype=float)
        past = sysm.orbit(system, x, -lo)[::-1]  # x_{-lo} .. x_0
        future = sysm.orbit(system, x, hi)  # x_0 .. x_hi
        self._offset = lo
        self.points = np.concatenate([past, future[1:]])
        n = len(self.points)
        d, r = system.ambient_dim, system.unstable_dim
        J = sysm.jacobian(system, self.points)
        self._J = J
        U = np.empty((n, d, r))
        K = np.empty((n, r, r))
        F = sysm.initial_frame(system, r)
        for i in range(n):
            U[i] = F
            F, K[i] = push_frame(J[i], F)
        S = np.empty((n, d, d - r))
        if d > r:
            G = sysm.initial_frame(system, d - r)
            S[-1] = G
            for i in range(n - 2, -1, -1):
                G, _ = push_frame(np.linalg.inv(J[i]), G)
                S[i] = G
        self.U, self.S, self.K = U, S, K
        # oblique coordinate maps: rows [:r] give unstable coords, [r:] stable
        self.P = np.linalg.inv(np.concatenate([U, S], axis=2))
        # expansion of the stable frame at x_{i+1} under the inverse step
        growth = np.ones(n)
        if d > r:
            for i in range(n - 1):
                growth[i] = np.linalg.norm(np.linalg.solve(J[i], S[i + 1]), 2)
        self._stable_growth = growth

    # index helpers -------------------------------------------------------
    def _i(self, j: int) -> int:
        i = j + self._offset
        if i < 0 or i >= len(self.points):
            raise IndexError(f"orbit index {j} outside the atlas")
        return i

    def point(self, j: int) -> np.ndarray:
        return self.points[self._i(j)]

    def frame(self, j: int) -> np.ndarray:
        return self.U[self._i(j)]

    def stable(self, j: int) -> np.ndarray:
        return self.S[self._i(j)]

    def df0(self, j: int) -> np.ndarray:
        """Matrix of d f_hat at 0 from the chart at x_j to the chart at x_{j+1}."""
        return self.K[self._i(j)]

    def df0_power(self, j: int, m: int) -> np.ndarray:
        """d f_hat^m_{x_j}(0) in chart coordinates (m >= 0)."""
        r = self.system.unstable_dim
        M = np.eye(r)
        for i in range(m):
            M = self.df0(j + i) @ M
        return M

    @property
    def min_index(self) -> int:
        return -self._offset + self.leaf_depth

    @property
    def max_index(self) -> int:
        return len(self.points) - 1 - self._offset

    # coordinates ---------------------------------------------------------
    def split(self, j: int, e) -> tuple[np.ndarray, np.ndarray]:
        """Oblique (unstable, stable) coordinates of a displacement at x_j."""
        r = self.system.unstable_dim
        w = np.asarray(e, dtype=float) @ self.P[self._i(j)].T
        return w[..., :r], w[..., r:]

    def coords(self, j: int, e) -> np.ndarray:
        return self.split(j, e)[0]

    def push(self, j: int, e, m: int = 1) -> np.ndarray:
        """Displacement at x_{j+m} of f^m(x_j + e)."""
        e = np.asarray(e, dtype=float)
        for i in range(m):
            e = sysm.displacement(self.system, self.point(j + i), e)
        return e

    def pull(self, j: int, e, m: int = 1) -> np.ndarray:
        """Displacement at x_{j-m} of f^{-m}(x_j + e)."""
        e = np.asarray(e, dtype=float)
        for i in range(m):
            e = sysm.inverse_displacement(self.system, self.point(j - i - 1), e)
        return e

    def pull_coords(self, j: int, u, m: int = 1, ladder: bool = False):
        """Chart coordinates at x_{j-m} of f^{-m}(Phi_{x_j}(u)).

        Backward iteration expands the stable direction, so round-off
        transverse to the leaf grows; whenever the accumulated stable
        expansion exceeds ``RESEAT_GROWTH`` the point is re-seated on the
        unstable leaf through its chart coordinates.  With ``ladder=True``
        the list of coordinates at x_{j-1}, ..., x_{j-m} is returned.
        """
        w = np.atleast_2d(np.asarray(u, dtype=float))
        if m == 0:
            return [] if ladder else w
        e = self.leaf(j, w)
        growth = 1.0
        out = []
        for i in range(m):
            e = sysm.inverse_displacement(self.system, self.point(j - i - 1), e)
            growth *= self._stable_growth[self._i(j - i - 1)]
            if ladder or (growth > RESEAT_GROWTH and i < m - 1):
                c = self.coords(j - i - 1, e)
                out.append(c)
                if growth > RESEAT_GROWTH and i < m - 1:
                    e = self.leaf(j - i - 1, c)
                    growth = 1.0
        return out if ladder else self.coords(j - m, e)

    def leaf(self, j: int, u) -> np.ndarray:
        """Displacement ``Phi_{x_j}(u) - x_j`` of the leaf point with coordinate u."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        U = self.frame(j)
        n = self.leaf_depth
        if n == 0:
            return u @ U.T
        if j - n < -self._offset:
            raise IndexError("atlas too short for a leaf chart at this index")
        # parameter on the flat disc at x_{j-n}; start from the linearization
        A = self.df0_power(j - n, n)
        sigma = np.linalg.solve(A, u.T).T
        U0 = self.frame(j - n)
        scale = np.maximum(np.linalg.norm(u, axis=1), 1e-300)
        for _ in range(30):
            e = sigma @ U0.T
            T = np.broadcast_to(U0, e.shape[:-1] + U0.shape).copy()
            for i in range(n):
                x = self.point(j - n + i)
                T = sysm.jacobian(self.system, x + e) @ T
                e = sysm.displacement(self.system, x, e)
            c = self.coords(j, e)
            resid = c - u
            dc = np.einsum("ab,nbc->nac", self.P[self._i(j)][: u.shape[1]], T)
            sigma = sigma - np.linalg.solve(dc, resid[..., None])[..., 0]
            if np.all(np.linalg.norm(resid, axis=1) <= 1e-15 * scale + 1e-300):
                break
        return e

    def chart(self, j: int = 0, radius: float = EPS0) -> "UnstableChart":
        return UnstableChart.from_atlas(self, j, radius)


@dataclass(frozen=True, eq=False)
class UnstableChart:
    """Chart on the local unstable leaf of ``base`` (see module docstring)."""

    base: np.ndarray
    frame: Subspace
    radius: float
    C: float
    atlas: Atlas = field(repr=False)
    index: int = 0

    @classmethod
    def from_atlas(cls, atlas: Atlas, j: int, radius: float = EPS0) -> "UnstableChart":
        C = _chart_constant(atlas, j, radius)
        return cls(atlas.point(j), Subspace(atlas.frame(j)), radius, C, atlas, j)

    @property
    def system(self):
        return self.atlas.system

    @property
    def dim(self) -> int:
        return self.atlas.system.unstable_dim

    def shifted(self, m: int) -> "UnstableChart":
        """The chart at f^m(base) along the same atlas."""
        return UnstableChart.from_atlas(self.atlas, self.index + m, self.radius)

    def point(self, u) -> np.ndarray:
        """Ambient point Phi_x(u) (periodic coordinates reduced)."""
        e = self.atlas.leaf(self.index, u)
        return sysm._reduce(self.system, self.base + e)


def make_chart(system, x, back: int = 16, fwd: int = 16, radius: float = EPS0) -> UnstableChart:
    """Chart at ``x`` backed by an atlas of ``back`` past and ``fwd`` future steps."""
    return Atlas(system, x, back, fwd).chart(0, radius)


def _chart_constant(atlas: Atlas, j: int, radius: float) -> float:
    """max(||dPhi||, ||dPhi^{-1}||) sampled along the chart's coordinate axes."""
    if atlas.leaf_depth == 0:
        return 1.0
    r = atlas.system.unstable_dim
    h = 1e-6 * radius
    worst = 1.0
    for t in (-radius, 0.0, radius):
        for a in range(r):
            u = np.zeros((2, r))
            u[:, a] = t
            u[0, a] -= h
            u[1, a] += h
            e = atlas.leaf(j, u)
            tangent = (e[1] - e[0]) / (2 * h)
            nrm = float(np.linalg.norm(tangent))
            worst = max(worst, nrm, 1.0 / nrm)
    return worst


def _as_batch(u, r):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    return np.atleast_2d(u).reshape(-1, r), single


def _check_system(system, chart):
    if system is not None and system != chart.system:
        raise DomainError("chart was built for a different system")


def hat_f(system, chart: UnstableChart, u, eps1: float = EPS1, return_error: bool = False):
    """Chart map f_hat_x: coordinates at f(x) of f(Phi_x(u)).

    With ``return_error=True`` also returns the distance from f(Phi_x(u)) to
    the leaf point Phi_{f(x)}(f_hat(u)) (the projection error).
    """
    _check_system(system, chart)
    U, single = _as_batch(u, chart.dim)
    if np.any(np.linalg.norm(U, axis=1) > eps1 * (1 + 1e-12)):
        raise RadiusError(f"|u| exceeds eps1 = {eps1}")
    at = chart.atlas
    j = chart.index
    e = at.push(j, at.leaf(j, U), 1)
    v = at.coords(j + 1, e)
    out = v[0] if single else v
    if not return_error:
        return out
    err = np.linalg.norm(e - at.leaf(j + 1, v), axis=1)
    return out, (err[0] if single else err)


def hat_f_power(chart: UnstableChart, u, m: int) -> np.ndarray:
    """f_hat^m_x(u) for m >= 0 (no radius restriction on the images)."""
    at = chart.atlas
    U, single = _as_batch(u, chart.dim)
    v = at.coords(chart.index + m, at.push(chart.index, at.leaf(chart.index, U), m))
    return v[0] if single else v


def hat_f_pullback(system, chart: UnstableChart, u, p: int, eps1: float = EPS1) -> np.ndarray:
    """f_hat_x^{-p}(u): coordinates at f^{-p}(x) of f^{-p}(Phi_x(u))."""
    _check_system(system, chart)
    if p < 1:
        raise DomainError("p must be >= 1")
    U, single = _as_batch(u, chart.dim)
    if np.any(np.linalg.norm(U, axis=1) > eps1 * (1 + 1e-12)):
        raise RadiusError(f"|u| exceeds eps1 = {eps1}")
    v = chart.atlas.pull_coords(chart.index, U, p)
    return v[0] if single else v


# ---------------------------------------------------------------------------
# local traces


@dataclass(frozen=True, eq=False)
class LocalTrace:
    """Chart coordinates of sample points on the local unstable leaf."""

    chart: UnstableChart
    eps: float
    coords: np.ndarray  # (n, unstable_dim)


def trace_tol_for(system) -> float:
    if system.topology == "solid_torus":
        # thickness of the attractor: diameter of its cross-section disc
        return 1e-3 * 2.0 * sysm.attractor_radius(system)
    return TRACE_TOL_TORUS


def _tree(sample):
    tree = getattr(sample, "_tree", None)
    if tree is None:
        pts = sample.points
        if sample.provenance == "dense_grid":
            tree = cKDTree(pts, boxsize=1.0)
        else:
            # theta periodic, disc coordinates shifted into a huge box
            shifted = pts.copy()
            shifted[:, 1:] += 5e5
            tree = cKDTree(shifted, boxsize=[1.0] + [1e6] * (pts.shape[1] - 1))
        object.__setattr__(sample, "_tree", tree)
    return tree


def _query_point(sample, x):
    if sample.provenance == "dense_grid":
        return x
    q = np.array(x, dtype=float, copy=True)
    q[1:] += 5e5
    return q


def local_trace(chart: UnstableChart, sample, eps: float, trace_tol: Optional[float] = None,
                slab: Optional[float] = None) -> LocalTrace:
    """Chart coordinates u (|u| <= eps) of sample points on the local leaf.

    For a ``dense_grid`` sample the basic set is the whole manifold, so every
    point of the leaf belongs to it: grid points within a slab of transverse
    half-width ``chart.radius`` around the leaf are slid along the stable
    direction onto the leaf and their leaf coordinates kept (the transverse
    offset of the kept point is then zero up to round-off).  ``slab``
    narrows the half-width, thinning the trace in proportion to the grid
    density.  For an
    ``attractor_orbit`` sample, points are kept only when their transverse
    offset from the leaf is at most ``trace_tol``.
    """
    if eps > chart.radius * (1 + 1e-12):
        raise RadiusError("eps exceeds the chart radius")
    system = chart.system
    at, j = chart.atlas, chart.index
    tol = trace_tol_for(system) if trace_tol is None else trace_tol
    tree = _tree(sample)
    width = chart.radius if slab is None else min(float(slab), chart.radius)
    if sample.provenance == "dense_grid":
        reach = chart.C * math.hypot(eps, width) * 1.01
    else:
        reach = chart.C * eps * 1.01 + tol
    idx = np.array(sorted(tree.query_ball_point(_query_point(sample, chart.base), reach)), dtype=int)
    r = chart.dim
    if idx.size == 0:
        return LocalTrace(chart, eps, np.zeros((0, r)))
    e = sysm.lift_difference(system, sample.points[idx], chart.base)
    u, s = at.split(j, e)
    keep = np.linalg.norm(u, axis=1) <= eps
    if sample.provenance == "dense_grid":
        keep &= np.linalg.norm(s, axis=1) <= width
        return LocalTrace(chart, eps, u[keep])
    u = u[keep]
    e = e[keep]
    if len(u):
        offset = np.linalg.norm(e - at.leaf(j, u), axis=1)
        u = u[offset <= tol]
    return LocalTrace(chart, eps, u)
