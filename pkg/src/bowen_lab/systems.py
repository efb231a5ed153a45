"""The zoo of hyperbolic maps behind one functional interface.

Shipped systems
---------------
``cat``       the linear automorphism A = [[2, 1], [1, 1]] of the 2-torus
``pcat``      x -> A x + eta * (sin 2 pi x2, 0) / (2 pi)  (mod 1), eta <= 0.05
``solenoid``  (theta, z) -> (2 theta mod 1, lam z + a e(theta)) on the solid torus,
              e(theta) = (cos 2 pi theta, sin 2 pi theta), lam <= 0.2
``prod4``     blockdiag(A, A^2) on the 4-torus plus an optional coupling
              eta * (sin 2 pi x4, 0, sin 2 pi x2, 0) / (2 pi)

All maps act on points of shape ``(ambient_dim,)`` or on batches of shape
``(n, ambient_dim)``.  Besides point evaluation every system offers an
accurate *displacement* map ``d -> f(x + d) - f(x)`` computed in the universal
cover, which is what the chart machinery is built on: differences of nearby
orbits are propagated without the catastrophic cancellation of subtracting
two points reduced modulo 1.

A system may carry a block exponent ``k`` (``with_block``); all primitives then
evaluate ``f^k``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import BranchError, DomainError, OrbitError
from .linalg import Subspace, push_frame, mgs

LAMBDA_PLUS = (3.0 + math.sqrt(5.0)) / 2.0
LOG_LAMBDA = math.log(LAMBDA_PLUS)
CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_INVERSE = np.array([[1.0, -1.0], [-1.0, 2.0]])
TWO_PI = 2.0 * math.pi

NEWTON_TOL = 1e-12
NEWTON_CAP = 50


def _prod4_matrix():
    B = np.zeros((4, 4))
    B[:2, :2] = CAT_MATRIX
    B[2:, 2:] = CAT_MATRIX @ CAT_MATRIX
    return B


PROD4_MATRIX = _prod4_matrix()
PROD4_INVERSE = np.linalg.inv(PROD4_MATRIX).round()  # integer matrix, det 1


@dataclass(frozen=True)
class SystemModel:
    """A discrete-time hyperbolic map.

    ``known_rates`` holds per-block ``(alpha, beta)`` expansion rates per unit
    step when the unstable dynamics is affine (then alpha == beta).
    """

    name: str
    ambient_dim: int
    unstable_dim: int
    params: dict = field(default_factory=dict)
    topology: str = "torus2"
    known_rates: Optional[tuple] = None
    block: int = 1
    seed: int = 0

    @property
    def linear(self) -> bool:
        """True when the map is affine in the universal cover (exact charts)."""
        if self.name == "cat":
            return True
        if self.name == "prod4":
            return self.params.get("eta", 0.0) == 0.0
        if self.name == "pcat":
            return self.params.get("eta", 0.0) == 0.0
        return False

    @property
    def periodic(self) -> np.ndarray:
        """Mask of coordinates that live on a circle."""
        if self.topology == "solid_torus":
            return np.array([True, False, False])
        return np.ones(self.ambient_dim, dtype=bool)

    @property
    def label(self) -> str:
        if self.name == "prod4":
            return "prod4-linear" if self.linear else "prod4-perturbed"
        return self.name


def cat() -> SystemModel:
    return SystemModel("cat", 2, 1, {}, "torus2", ((LOG_LAMBDA, LOG_LAMBDA),))


def pcat(eta: float = 0.03) -> SystemModel:
    if abs(eta) > 0.05:
        raise DomainError("pcat requires |eta| <= 0.05")
    return SystemModel("pcat", 2, 1, {"eta": float(eta)}, "torus2",
                       ((LOG_LAMBDA, LOG_LAMBDA),) if eta == 0 else None)


def solenoid(a: float = 0.5, lam: float = 0.1) -> SystemModel:
    if not 0.0 < lam <= 0.2:
        raise DomainError("solenoid requires 0 < lam <= 0.2")
    if a <= 0:
        raise DomainError("solenoid requires a > 0")
    return SystemModel("solenoid", 3, 1, {"a": float(a), "lam": float(lam)}, "solid_torus",
                       ((math.log(2.0), math.log(2.0)),))


def prod4(eta: float = 0.0) -> SystemModel:
    if abs(eta) > 0.05:
        raise DomainError("prod4 coupling requires |eta| <= 0.05")
    rates = ((LOG_LAMBDA, LOG_LAMBDA), (2 * LOG_LAMBDA, 2 * LOG_LAMBDA)) if eta == 0 else None
    return SystemModel("prod4", 4, 2, {"eta": float(eta)}, "torus4", rates)


_FACTORIES = {
    "cat": cat,
    "pcat": pcat,
    "solenoid": solenoid,
    "prod4": prod4,
    "prod4-linear": lambda: prod4(0.0),
    "prod4-perturbed": lambda eta=0.02: prod4(eta),
}


def make_system(name: str, **params) -> SystemModel:
    """Build a shipped system by name (``cat``, ``pcat``, ``solenoid``, ``prod4``,
    ``prod4-linear``, ``prod4-perturbed``)."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise DomainError(f"unknown system {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {name}: {exc}") from None


def with_block(system: SystemModel, k: int) -> SystemModel:
    """The same system with ``f`` replaced by ``f^k``."""
    if k < 1:
        raise DomainError("block exponent must be >= 1")
    return dataclasses.replace(system, block=int(k))


def base_system(system: SystemModel) -> SystemModel:
    return dataclasses.replace(system, block=1) if system.block != 1 else system


# ---------------------------------------------------------------------------
# single base steps (batch friendly)


def _e(theta):
    return np.stack([np.cos(TWO_PI * theta), np.sin(TWO_PI * theta)], axis=-1)


def _sin_diff(x, d):
    """(sin 2 pi (x + d) - sin 2 pi x) / (2 pi), accurate for small d."""
    return np.cos(TWO_PI * x + math.pi * d) * np.sin(math.pi * d) / math.pi


def _cos_diff(x, d):
    """(cos 2 pi (x + d) - cos 2 pi x) / (2 pi), accurate for small d."""
    return -np.sin(TWO_PI * x + math.pi * d) * np.sin(math.pi * d) / math.pi


def _lifted1(system, x):
    """One base step in the universal cover (no reduction)."""
    name = system.name
    if name == "cat":
        return x @ CAT_MATRIX.T
    if name == "pcat":
        y = x @ CAT_MATRIX.T
        y[..., 0] += system.params["eta"] * np.sin(TWO_PI * x[..., 1]) / TWO_PI
        return y
    if name == "prod4":
        y = x @ PROD4_MATRIX.T
        eta = system.params["eta"]
        if eta:
            y[..., 0] += eta * np.sin(TWO_PI * x[..., 3]) / TWO_PI
            y[..., 2] += eta * np.sin(TWO_PI * x[..., 1]) / TWO_PI
        return y
    if name == "solenoid":
        a, lam = system.params["a"], system.params["lam"]
        y = np.empty_like(x)
        y[..., 0] = 2.0 * x[..., 0]
        y[..., 1:] = lam * x[..., 1:] + a * _e(x[..., 0])
        return y
    raise DomainError(f"unknown system {name!r}")


def _reduce(system, y):
    y = np.array(y, dtype=float, copy=True)
    per = system.periodic
    y[..., per] = np.mod(y[..., per], 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    y[..., per] = np.where(y[..., per] >= 1.0, 0.0, y[..., per])
    return y


def _jac1(system, x):
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    name = system.name
    if name in ("cat", "pcat"):
        J = np.broadcast_to(CAT_MATRIX, shape + (2, 2)).copy()
        if name == "pcat":
            J[..., 0, 1] += system.params["eta"] * np.cos(TWO_PI * x[..., 1])
        return J
    if name == "prod4":
        J = np.broadcast_to(PROD4_MATRIX, shape + (4, 4)).copy()
        eta = system.params["eta"]
        if eta:
            J[..., 0, 3] += eta * np.cos(TWO_PI * x[..., 3])
            J[..., 2, 1] += eta * np.cos(TWO_PI * x[..., 1])
        return J
    if name == "solenoid":
        a, lam = system.params["a"], system.params["lam"]
        J = np.zeros(shape + (3, 3))
        th = x[..., 0]
        J[..., 0, 0] = 2.0
        J[..., 1, 0] = -TWO_PI * a * np.sin(TWO_PI * th)
        J[..., 2, 0] = TWO_PI * a * np.cos(TWO_PI * th)
        J[..., 1, 1] = lam
        J[..., 2, 2] = lam
        return J
    raise DomainError(f"unknown system {name!r}")


def _disp1(system, x, d):
    """f(x + d) - f(x) in the universal cover, for one base step."""
    d = np.asarray(d, dtype=float)
    name = system.name
    if name == "cat":
        return d @ CAT_MATRIX.T
    if name == "pcat":
        e = d @ CAT_MATRIX.T
        e[..., 0] += system.params["eta"] * _sin_diff(x[..., 1], d[..., 1])
        return e
    if name == "prod4":
        e = d @ PROD4_MATRIX.T
        eta = system.params["eta"]
        if eta:
            e[..., 0] += eta * _sin_diff(x[..., 3], d[..., 3])
            e[..., 2] += eta * _sin_diff(x[..., 1], d[..., 1])
        return e
    if name == "solenoid":
        a, lam = system.params["a"], system.params["lam"]
        e = np.empty(np.broadcast(x, d).shape)
        e[..., 0] = 2.0 * d[..., 0]
        e[..., 1] = lam * d[..., 1] + a * TWO_PI * _cos_diff(x[..., 0], d[..., 0])
        e[..., 2] = lam * d[..., 2] + a * TWO_PI * _sin_diff(x[..., 0], d[..., 0])
        return e
    raise DomainError(f"unknown system {name!r}")


def _newton_linear_plus_periodic(system, matrix_inv, residual, jac, guess):
    """Generic Newton loop used by the inverse maps of pcat and prod4."""
    z = guess
    for it in range(NEWTON_CAP):
        r = residual(z)
        J = jac(z)
        dz = np.linalg.solve(J, r[..., None])[..., 0]
        z = z - dz
        if np.max(np.abs(dz), initial=0.0) <= NEWTON_TOL:
            # one polishing step once in the quadratic regime
            r = residual(z)
            z = z - np.linalg.solve(jac(z), r[..., None])[..., 0]
            return z
    raise OrbitError("inverse Newton solve did not converge in 50 iterations")


def _inv1(system, y):
    y = np.asarray(y, dtype=float)
    name = system.name
    if name == "cat":
        return _reduce(system, y @ CAT_INVERSE.T)
    if name in ("pcat", "prod4"):
        M, Minv = (CAT_MATRIX, CAT_INVERSE) if name == "pcat" else (PROD4_MATRIX, PROD4_INVERSE)
        if system.linear:
            return _reduce(system, y @ Minv.T)
        guess = y @ Minv.T

        def residual(z):
            r = _lifted1(system, z) - y
            return r - np.round(r)  # equality modulo the integer lattice

        x = _newton_linear_plus_periodic(system, Minv, residual, lambda z: _jac1(system, z), guess)
        return _reduce(system, x)
    if name == "solenoid":
        return _solenoid_inverse(system, y)
    raise DomainError(f"unknown system {name!r}")


def attractor_radius(system) -> float:
    a, lam = system.params["a"], system.params["lam"]
    return a / (1.0 - lam)


def _solenoid_inverse(system, y):
    """Inverse branch of the solenoid picked by consistency with the attractor.

    The two candidate preimage angles theta/2 and theta/2 + 1/2 give preimage
    disc coordinates that are 2a/lam apart; only the branch that lands back in
    the attractor disc |z| <= a/(1-lam) is consistent with the orbit history.
    """
    a, lam = system.params["a"], system.params["lam"]
    R = attractor_radius(system)
    y = np.asarray(y, dtype=float)
    th0 = 0.5 * y[..., 0]
    th1 = th0 + 0.5
    z0 = (y[..., 1:] - a * _e(th0)) / lam
    z1 = (y[..., 1:] - a * _e(th1)) / lam
    n0 = np.linalg.norm(z0, axis=-1)
    n1 = np.linalg.norm(z1, axis=-1)
    slack = 1e-6 * R + 1e-9
    ok0 = n0 <= R + slack
    ok1 = n1 <= R + slack
    if np.any(~(ok0 | ok1)):
        raise BranchError("no solenoid inverse branch lands in the attractor disc")
    pick1 = n1 < n0
    x = np.empty_like(y)
    x[..., 0] = np.where(pick1, th1, th0)
    x[..., 1:] = np.where(pick1[..., None], z1, z0)
    return _reduce(system, x)


def _solenoid_backward(system, x, n):
    """Backward orbit x, f^{-1}x, ..., f^{-n}x of a point on the solenoid attractor.

    Pulling back the disc coordinate divides round-off by lam at every step, so
    a naive backward iteration leaves the attractor after a dozen steps.  The
    angles are stable backwards: the branch of each preimage angle is chosen
    by the attractor-disc test while that test is conclusive (and arbitrarily
    once the history no longer matters, its influence being lam^depth), and
    the disc coordinates are then rebuilt *forward* from the deepest point,
    which is numerically contracting.
    """
    a, lam = system.params["a"], system.params["lam"]
    R = attractor_radius(system)
    thetas = np.empty(n + 1)
    thetas[0] = x[0]
    z = x[1:].copy()
    reliable = True
    for i in range(1, n + 1):
        th0 = 0.5 * thetas[i - 1]
        th = th0
        if reliable:
            z0 = (z - a * _e(th0)) / lam
            z1 = (z + a * _e(th0)) / lam
            n0, n1 = np.linalg.norm(z0), np.linalg.norm(z1)
            if i == 1 and min(n0, n1) > R * (1 + 1e-6) + 1e-9:
                raise BranchError("no solenoid inverse branch lands in the attractor disc")
            if n1 < n0:
                th, z = th0 + 0.5, z1
            else:
                z = z0
            # once round-off dominates the disc test is no longer meaningful
            reliable = max(n0, n1) > 1.5 * R and np.linalg.norm(z) < 10 * R
        thetas[i] = th
    pts = np.empty((n + 1, 3))
    pts[:, 0] = np.mod(thetas, 1.0)
    zz = np.zeros(2)
    for i in range(n, 0, -1):
        pts[i, 1:] = zz
        zz = lam * zz + a * _e(thetas[i])
    pts[0, 1:] = x[1:]
    return pts


def _inv_disp1(system, x, e):
    """Solve f(x + d) - f(x) = e for d, given the base point x (one base step)."""
    e = np.asarray(e, dtype=float)
    name = system.name
    if name == "cat":
        return e @ CAT_INVERSE.T
    if name in ("pcat", "prod4"):
        Minv = CAT_INVERSE if name == "pcat" else PROD4_INVERSE
        d = e @ Minv.T
        if system.linear:
            return d
        xb = np.broadcast_to(x, d.shape)

        def residual(dd):
            return _disp1(system, xb, dd) - e

        return _newton_linear_plus_periodic(system, Minv, residual,
                                            lambda dd: _jac1(system, xb + dd), d)
    if name == "solenoid":
        a, lam = system.params["a"], system.params["lam"]
        d = np.empty(np.broadcast(x, e).shape)
        d[..., 0] = 0.5 * e[..., 0]
        th = np.broadcast_to(x[..., 0], d[..., 0].shape)
        d[..., 1] = (e[..., 1] - a * TWO_PI * _cos_diff(th, d[..., 0])) / lam
        d[..., 2] = (e[..., 2] - a * TWO_PI * _sin_diff(th, d[..., 0])) / lam
        return d
    raise DomainError(f"unknown system {name!r}")


# ---------------------------------------------------------------------------
# public map interface (respects the block exponent)


def step(system: SystemModel, x) -> np.ndarray:
    """f(x) with periodic coordinates reduced into [0, 1)."""
    y = np.asarray(x, dtype=float)
    for _ in range(system.block):
        y = _reduce(system, _lifted1(system, y))
    return y


def inverse_step(system: SystemModel, x) -> np.ndarray:
    """f^{-1}(x); Newton for the perturbed maps, branch selection for the solenoid."""
    y = np.asarray(x, dtype=float)
    for _ in range(system.block):
        y = _inv1(system, y)
    return y


def jacobian(system: SystemModel, x) -> np.ndarray:
    """Df(x) (the product over the block for blocked systems)."""
    y = np.asarray(x, dtype=float)
    J = None
    for _ in range(system.block):
        Jy = _jac1(system, y)
        J = Jy if J is None else Jy @ J
        y = step(base_system(system), y)
    return J


def displacement(system: SystemModel, x, d) -> np.ndarray:
    """f(x + d) - f(x) computed in the universal cover."""
    x = np.asarray(x, dtype=float)
    e = np.asarray(d, dtype=float)
    base = base_system(system)
    for _ in range(system.block):
        e = _disp1(system, x, e)
        x = step(base, x)
    return e


def inverse_displacement(system: SystemModel, x, e) -> np.ndarray:
    """The d with f(x + d) - f(x) = e, where x is the *preimage* base point."""
    x = np.asarray(x, dtype=float)
    base = base_system(system)
    points = [x]
    for _ in range(system.block - 1):
        points.append(step(base, points[-1]))
    d = np.asarray(e, dtype=float)
    for xb in reversed(points):
        d = _inv_disp1(system, xb, d)
    return d


def lift_difference(system: SystemModel, y, x) -> np.ndarray:
    """y - x with periodic coordinates wrapped into [-1/2, 1/2)."""
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    per = system.periodic
    diff[..., per] -= np.round(diff[..., per])
    return diff


def distance(system: SystemModel, x, y) -> np.ndarray:
    """Flat-metric distance (per coordinate min(|D|, 1 - |D|) on circles)."""
    return np.linalg.norm(lift_difference(system, y, x), axis=-1)


def orbit(system: SystemModel, x, n: int) -> np.ndarray:
    """Points f^j(x) for j = 0..n (n >= 0) or f^{-j}(x) for j = 0..|n| (n < 0)."""
    if n < 0 and system.name == "solenoid":
        k = system.block
        return _solenoid_backward(system, np.asarray(x, dtype=float), -n * k)[::k]
    pts = [np.asarray(x, dtype=float)]
    fn = step if n >= 0 else inverse_step
    for _ in range(abs(n)):
        pts.append(fn(system, pts[-1]))
    return np.array(pts)


# ---------------------------------------------------------------------------
# invariant sets


@dataclass(frozen=True)
class LambdaSample:
    """A finite sample of the basic set."""

    points: np.ndarray
    provenance: str  # "dense_grid" | "attractor_orbit"
    hausdorff_tol: float
    system_label: str = ""


def sample_lambda(system: SystemModel, budget: int, seed: int) -> LambdaSample:
    """Sample the basic set.

    Toral systems (where the basic set is the whole torus) get a scrambled
    Halton low-discrepancy grid; the solenoid gets ``budget`` iterates of a
    seeded orbit after discarding 1000 transient iterates.
    """
    if budget < 1:
        raise DomainError("budget must be >= 1")
    base = base_system(system)
    if system.topology in ("torus2", "torus4"):
        d = system.ambient_dim
        pts = qmc.Halton(d, scramble=True, seed=np.random.default_rng(seed)).random(budget)
        pts = np.where(pts >= 1.0, 0.0, pts)
        # dispersion scale of a d-dimensional grid with `budget` points
        tol = max(1e-3, 2.0 * math.sqrt(d) * budget ** (-1.0 / d))
        return LambdaSample(pts, "dense_grid", tol, system.label)
    return LambdaSample(_solenoid_orbit(system, budget, seed), "attractor_orbit", 1e-3, system.label)


def _solenoid_orbit(system, budget, seed, transient=1000):
    """Seeded solenoid orbit that does not collapse under floating-point doubling.

    Doubling a double-precision angle shifts out one mantissa bit per step, so
    a naively iterated orbit reaches the fixed point theta = 0 after ~53 steps.
    Instead the starting angle is given by a seeded infinite binary expansion:
    theta_n is read off a sliding 53-bit window of the bit stream (this is the
    exact doubling-map orbit of that real number), and the disc coordinate is
    iterated with the map itself.
    """
    a, lam = system.params["a"], system.params["lam"]
    rng = np.random.default_rng(seed)
    n = transient + budget
    bits = rng.integers(0, 2, size=n + 53).astype(float)
    weights = 0.5 ** np.arange(1, 54)
    windows = np.lib.stride_tricks.sliding_window_view(bits, 53)[:n]
    thetas = windows @ weights
    thetas = np.where(thetas >= 1.0, 0.0, thetas)
    z = 0.5 * attractor_radius(system) * rng.uniform(-1, 1, 2)
    pts = np.empty((budget, 3))
    for i in range(n):
        if i >= transient:
            pts[i - transient, 0] = thetas[i]
            pts[i - transient, 1:] = z
        z = lam * z + a * _e(thetas[i])
    return pts


def invariance_defect(system: SystemModel, sample: LambdaSample, steps: int = 10) -> float:
    """Largest distance from f^j(sample) (j <= steps) to the sample itself."""
    from scipy.spatial import cKDTree

    pts = sample.points
    base = base_system(system)
    if sample.provenance == "dense_grid":
        tree = cKDTree(pts, boxsize=1.0)
        dist_of = lambda q: tree.query(q)[0]
    else:
        # only theta is periodic: duplicate a thin band of points across theta = 0
        tree = cKDTree(np.column_stack([np.cos(TWO_PI * pts[:, 0]) / TWO_PI,
                                        np.sin(TWO_PI * pts[:, 0]) / TWO_PI, pts[:, 1:]]))
        dist_of = lambda q: tree.query(np.column_stack([np.cos(TWO_PI * q[:, 0]) / TWO_PI,
                                                        np.sin(TWO_PI * q[:, 0]) / TWO_PI,
                                                        q[:, 1:]]))[0]
    worst = 0.0
    q = pts
    for _ in range(steps):
        q = step(base, q)
        worst = max(worst, float(np.max(dist_of(q))))
    return worst


# ---------------------------------------------------------------------------
# invariant directions


def initial_frame(system: SystemModel, rank: int) -> np.ndarray:
    """Deterministic pseudo-random frame used to seed power iterations."""
    rng = np.random.default_rng(system.seed + 7919 * rank)
    Q, _ = mgs(rng.standard_normal((system.ambient_dim, rank)))
    return Q


def unstable_direction(system: SystemModel, x, warmup: int = 40) -> Subspace:
    """E^u(x): push a seeded frame forward ``warmup`` steps from f^{-warmup}(x)."""
    if warmup < 1:
        raise DomainError("warmup must be >= 1")
    back = orbit(system, x, -warmup)[::-1]  # f^{-warmup}x ... x
    F = initial_frame(system, system.unstable_dim)
    for y in back[:-1]:
        F, _ = push_frame(jacobian(system, y), F)
    return Subspace(F)


def stable_direction(system: SystemModel, x, warmup: int = 40) -> Subspace:
    """E^s(x): pull a seeded frame back from f^{warmup}(x) with inverse Jacobians."""
    if warmup < 1:
        raise DomainError("warmup must be >= 1")
    fwd = orbit(system, x, warmup)
    F = initial_frame(system, system.ambient_dim - system.unstable_dim)
    for y in fwd[-2::-1]:
        F, _ = push_frame(np.linalg.inv(jacobian(system, y)), F)
    return Subspace(F)
