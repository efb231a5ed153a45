"""Local stable holonomies between nearby unstable leaves.

Given charts at two nearby points ``x`` and ``y``, the holonomy sends the
leaf point ``P = Phi_x(u)`` to the point ``Q = Phi_y(w)`` of the unstable
leaf of ``y`` that lies on the stable leaf of ``P``.  It is found by forward
matching: ``w`` minimizes ``|f^h(Q) - f^h(P)|`` for a horizon ``h``.  The
difference of the two orbits is propagated with the displacement maps, so
it keeps full relative precision while it contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from . import charts as ch
from . import systems as sysm
from .errors import DomainError, HolonomyError

HORIZON = 25
HOLONOMY_TOL = 1e-6


ROUNDOFF_MARGIN = 0.01  # amplified round-off must stay below this fraction of tol


def stable_neighbor(system, x, d: float, n: int = 20, column: int = 0) -> np.ndarray:
    """A point ``y`` on the stable leaf of ``x`` at distance about ``|d|``.

    A displacement along a stable direction at ``f^n(x)`` is pulled back
    ``n`` steps: the pullback expands it to size ``|d|`` while any component
    transverse to the stable leaf shrinks.  The size at ``f^n(x)`` comes
    from the linearized pullback, then is corrected by two rescalings.
    """
    at = ch.Atlas(system, x, back=2, fwd=n + 1)
    S = at.stable(n)
    if S.shape[1] == 0:
        raise DomainError("system has no stable directions")
    v = S[:, column]
    g = v.copy()
    for i in range(n - 1, -1, -1):
        g = np.linalg.solve(at._J[at._i(i)], g)
    s = abs(d) / float(np.linalg.norm(g))
    for _ in range(2):
        e = at.pull(n, s * v, n)
        s *= abs(d) / float(np.linalg.norm(e))
    e = at.pull(n, math.copysign(s, d) * v, n)
    return sysm._reduce(system, np.asarray(x, dtype=float) + e)


def _propagate(system, P, delta, horizon):
    """(f^h(P + delta) - f^h(P), f^h(P)) through the displacement maps."""
    for _ in range(horizon):
        delta = sysm.displacement(system, P, delta)
        P = sysm.step(system, P)
    return delta, P


def effective_horizon(system, P, size: float, horizon: int = HORIZON, tol: float = HOLONOMY_TOL) -> int:
    """Largest h <= horizon at which round-off in a difference of ``size`` stays below tol.

    Round-off of relative size machine-epsilon in the initial difference
    grows at most like the product of Jacobian norms along the orbit of P;
    the matching horizon is cut where that bound reaches
    ``ROUNDOFF_MARGIN * tol``.
    """
    budget = ROUNDOFF_MARGIN * tol / (np.finfo(float).eps * max(size, 1e-12))
    growth = 1.0
    P = np.asarray(P, dtype=float)
    for h in range(horizon):
        growth *= float(np.linalg.norm(sysm.jacobian(system, P), 2))
        if growth > budget:
            return max(h, 1)
        P = sysm.step(system, P)
    return horizon


@dataclass(frozen=True, eq=False)
class HolonomyMap:
    """Stable holonomy from the leaf of ``source_chart`` to that of ``target_chart``.

    ``horizon`` is the requested matching horizon; :meth:`apply` reports the
    horizon actually used (see :func:`effective_horizon`) via
    :meth:`match`.
    """

    source_chart: ch.UnstableChart
    target_chart: ch.UnstableChart
    horizon: int = HORIZON
    tol: float = HOLONOMY_TOL

    def _start(self, u, w):
        """(P, difference Phi_y(w) - Phi_x(u), size of the ingredients).

        The difference is assembled from the (exactly subtracted) base points
        and the two leaf displacements, so it keeps full relative precision.
        """
        sx, ty = self.source_chart, self.target_chart
        ex = sx.atlas.leaf(sx.index, u)[0]
        ey = ty.atlas.leaf(ty.index, w)[0]
        system = sx.system
        P = sysm._reduce(system, sx.base + ex)
        delta = sysm.lift_difference(system, ty.base, sx.base) + ey - ex
        size = float(np.linalg.norm(delta) + np.linalg.norm(ex) + np.linalg.norm(ey))
        return P, delta, size

    def match(self, u) -> tuple[np.ndarray, float, int]:
        """(w, residual, horizon used) for one chart vector ``u``."""
        sx, ty = self.source_chart, self.target_chart
        system = sx.system
        u = np.asarray(u, dtype=float).reshape(sx.dim)
        P, delta, _ = self._start(u, np.zeros(ty.dim))
        # linear guess: oblique projection along the stable directions at y
        w = -ty.atlas.coords(ty.index, delta)
        _, _, size = self._start(u, w)
        h = effective_horizon(system, P, size, self.horizon, self.tol)
        if not system.linear:
            w = self._newton(u, w, h)
        P, delta, _ = self._start(u, w)
        out, _ = _propagate(system, P, delta, h)
        return w, float(np.linalg.norm(out)), h

    def apply(self, u) -> tuple[np.ndarray, float]:
        """(w, residual) for one chart vector ``u``."""
        w, res, _ = self.match(u)
        return w, res

    def _newton(self, u, w, horizon):
        system = self.source_chart.system
        ty = self.target_chart
        r = ty.dim
        h_leaf = 1e-7
        best = (math.inf, w)
        converged = False
        for _ in range(30):
            W = np.concatenate([w[None, :] + h_leaf * np.eye(r), w[None, :] - h_leaf * np.eye(r)])
            E = ty.atlas.leaf(ty.index, W)
            T = (E[:r] - E[r:]).T / (2 * h_leaf)  # chart tangent at w, d x r
            P, delta, _ = self._start(u, w)
            for _ in range(horizon):
                T = sysm.jacobian(system, P + delta) @ T
                delta = sysm.displacement(system, P, delta)
                P = sysm.step(system, P)
            res = float(np.linalg.norm(delta))
            if res < best[0]:
                best = (res, w.copy())
            if converged:
                break
            step, *_ = np.linalg.lstsq(T, -delta, rcond=None)
            w = w + step
            # the iterate after the last (tiny) step is still scored
            converged = np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(w))
        return best[1]


def stable_holonomy(system, chart_x, chart_y, u, horizon: int = HORIZON, tol: float = HOLONOMY_TOL,
                    return_residual: bool = False):
    """Chart vector ``w`` at ``y`` whose leaf point is stable-related to ``Phi_x(u)``.

    Raises :class:`HolonomyError` when the forward-matching residual exceeds
    ``tol``.
    """
    ch._check_system(system, chart_x)
    ch._check_system(system, chart_y)
    w, res = HolonomyMap(chart_x, chart_y, horizon, tol).apply(u)
    if res > tol:
        raise HolonomyError(f"holonomy residual {res:.3g} exceeds {tol:.3g}")
    return (w, res) if return_residual else w
