"""Small dense linear algebra: subspaces, principal angles, volumes and cocycles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError

ORTHO_TOL = 1e-12
DEPENDENCE_TOL = 1e-13


def mgs(vectors: np.ndarray, passes: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt QR of the columns of ``vectors``.

    Two passes are made by default ("twice is enough"), which keeps the
    columns orthonormal to machine precision even for badly conditioned
    input.  Returns ``(Q, R)`` with ``vectors = Q @ R`` and ``diag(R) >= 0``.
    """
    M = np.array(vectors, dtype=float, copy=True)
    if M.ndim == 1:
        M = M[:, None]
    n, r = M.shape
    Q = M.copy()
    R = np.zeros((r, r))
    scale = np.linalg.norm(M, axis=0)
    for it in range(passes):
        Rp = np.zeros((r, r))
        for j in range(r):
            for i in range(j):
                c = Q[:, i] @ Q[:, j]
                Q[:, j] -= c * Q[:, i]
                Rp[i, j] += c
            nrm = np.linalg.norm(Q[:, j])
            if nrm == 0.0 or (it == 0 and nrm <= DEPENDENCE_TOL * scale[j]):
                raise DomainError("linearly dependent columns in Gram-Schmidt")
            Q[:, j] /= nrm
            Rp[j, j] = nrm
        R = Rp @ R if R.any() else Rp
    return Q, R


def push_frame(J: np.ndarray, frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Push an orthonormal frame through ``J`` and re-orthonormalize.

    Columns are orthonormalized from the last one backwards, so that under
    repeated pushing the last column tracks the fastest direction while the
    first column spans the slowest direction modulo the faster ones.
    Returns the new frame and the coefficient matrix ``K`` with
    ``J @ frame = new_frame @ K`` (``K`` is lower triangular).
    """
    M = J @ frame
    Q, R = mgs(M[:, ::-1])
    return Q[:, ::-1], R[::-1, ::-1]


@dataclass(frozen=True)
class Subspace:
    """A linear subspace stored through an orthonormal basis (columns)."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if B.shape[1] < 1 or B.shape[1] > B.shape[0]:
            raise DimensionError(f"invalid subspace basis shape {B.shape}")
        G = B.T @ B
        if np.max(np.abs(G - np.eye(B.shape[1]))) > ORTHO_TOL:
            raise DomainError("subspace basis is not orthonormal")
        object.__setattr__(self, "basis", B)

    @classmethod
    def span(cls, vectors) -> "Subspace":
        """Subspace spanned by the given columns (orthonormalized by MGS)."""
        Q, _ = mgs(np.asarray(vectors, dtype=float))
        return cls(Q)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the subspace."""
        return self.basis @ self.basis.T


def subspace_angle(A: Subspace, B: Subspace) -> float:
    """Largest principal angle between two subspaces of equal rank (radians)."""
    if A.ambient_dim != B.ambient_dim or A.rank != B.rank:
        raise DimensionError("subspaces must have the same ambient dimension and rank")
    s = np.linalg.svd(A.basis.T @ B.basis, compute_uv=False)
    cmin = float(np.clip(s.min(), -1.0, 1.0))
    angle = float(np.arccos(cmin))
    if angle < 1e-6:
        # arccos is badly conditioned near 1; use the sine of the angle instead
        resid = B.basis - A.basis @ (A.basis.T @ B.basis)
        angle = float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))
    return angle


def gram_volume(vectors: Sequence) -> float:
    """m-dimensional volume of the parallelepiped spanned by the vectors."""
    if len(vectors) == 0:
        raise DomainError("gram_volume of an empty family")
    G = np.column_stack([np.asarray(v, dtype=float) for v in vectors])
    if G.shape[1] > G.shape[0]:
        return 0.0
    # product of singular values is sqrt(det(G^T G)) without squaring round-off
    s = np.linalg.svd(G, compute_uv=False)
    return float(np.prod(s))


@dataclass(frozen=True)
class CocycleProduct:
    """Product of Jacobian factors along an orbit.

    ``factors`` are stored in multiplication order, so that ``value`` is the
    left-to-right product ``factors[0] @ factors[1] @ ...``.
    """

    factors: tuple
    value: np.ndarray
    log_norm: float
    log_conorm: float


def product_of(factors: Sequence[np.ndarray], dim: int) -> CocycleProduct:
    value = np.eye(dim)
    for F in factors:
        value = value @ F
    s = np.linalg.svd(value, compute_uv=False)
    return CocycleProduct(tuple(factors), value, float(np.log(s[0])), float(np.log(s[-1])))


def cocycle(system, x, n: int, on_unstable: bool = False) -> CocycleProduct:
    """Jacobian cocycle of ``system`` over ``n`` steps starting at ``x``.

    For ``n > 0`` this is ``Df(f^{n-1}x) ... Df(x)``; for ``n < 0`` the product
    of inverse Jacobians along the backward orbit; the identity for ``n = 0``.

    With ``on_unstable=True`` the factors are the matrices of the Jacobians
    restricted to the unstable bundle, written in orthonormal unstable frames
    pushed along the orbit (so norms and conorms are the unstable expansion
    rates rather than the full-space ones, whose conorm is the stable
    contraction).
    """
    from . import systems

    x = np.asarray(x, dtype=float)
    if on_unstable:
        return _unstable_cocycle(system, x, n)
    d = system.ambient_dim
    factors = []
    if n > 0:
        y = x
        for _ in range(n):
            factors.append(systems.jacobian(system, y))
            y = systems.step(system, y)
        factors.reverse()
    elif n < 0:
        for y in systems.orbit(system, x, n)[1:]:
            factors.append(np.linalg.inv(systems.jacobian(system, y)))
        # D f^{-m}(x) = Df(f^{-m}x)^{-1} ... Df(f^{-1}x)^{-1}
        factors.reverse()
    return product_of(factors, d)


def _unstable_cocycle(system, x, n):
    from . import systems

    r = system.unstable_dim
    start = x if n >= 0 else systems.orbit(system, x, n)[-1]
    F = systems.unstable_direction(system, start).basis
    y = start
    factors = []
    for _ in range(abs(n)):
        F, K = push_frame(systems.jacobian(system, y), F)
        factors.append(K)
        y = systems.step(system, y)
    factors.reverse()
    if n < 0:
        factors = [np.linalg.inv(K) for K in reversed(factors)]
    return product_of(factors, r)
