"""Estimator-style wrapper around the unstable-chart linearization.

``UnstableLinearizer`` follows the scikit-learn conventions (constructor
arguments stored verbatim, ``get_params`` / ``set_params``, ``fit`` returns
``self``, learned state in trailing-underscore attributes) without
depending on scikit-learn.
"""

from __future__ import annotations

import inspect
import math
from typing import Optional

import numpy as np

from . import charts as ch
from . import linearization as lin
from . import systems as sysm
from .errors import DomainError


class UnstableLinearizer:
    """Linearizing coordinates ``F_p`` on the unstable chart of one center.

    ``fit(X)`` builds the chart at ``center`` (block exponent chosen from the
    measured pinching unless ``block`` is given) and fits the geometric rate
    of the approximants on the probe vectors ``X``; ``transform(U)`` returns
    the order-``order`` approximant of each row of ``U``.
    """

    def __init__(self, system: str = "pcat", params: Optional[dict] = None, center=(0.2, 0.7),
                 order: int = 12, block: Optional[int] = None, horizon: int = 60):
        self.system = system
        self.params = params
        self.center = center
        self.order = order
        self.block = block
        self.horizon = horizon

    # parameter protocol ---------------------------------------------------
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._param_names()}

    def set_params(self, **params) -> "UnstableLinearizer":
        valid = set(self._param_names())
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r}")
            setattr(self, k, v)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    # fitting ----------------------------------------------------------------
    def _system(self):
        return sysm.make_system(self.system, **(self.params or {}))

    def fit(self, X, y=None) -> "UnstableLinearizer":
        system = self._system()
        if self.order < 0 or self.order > lin.P_CAP:
            raise DomainError(f"order must lie in [0, {lin.P_CAP}]")
        x = np.asarray(self.center, dtype=float)
        if self.block is not None:
            k = int(self.block)
        elif system.linear:
            k = 1
        else:
            k = lin.pinch_constants(system, x, self.horizon).t0_blocks
        blocked = sysm.with_block(sysm.base_system(system), k)
        self.chart_ = ch.Atlas(blocked, x, back=self.order + 2, fwd=4).chart(0)
        X = np.asarray(X, dtype=float).reshape(-1, system.unstable_dim)
        self.n_features_in_ = system.unstable_dim
        self.block_exponent_ = k
        self.state_ = lin.linearization_state(blocked, self.chart_, X, self.order)
        self.gamma_ = self.state_.gamma_hat
        self.C1_ = self.state_.C1_hat
        self.system_ = blocked
        return self

    def _check_fitted(self):
        if not hasattr(self, "chart_"):
            raise DomainError("UnstableLinearizer is not fitted")

    def transform(self, U) -> np.ndarray:
        self._check_fitted()
        U = np.asarray(U, dtype=float).reshape(-1, self.n_features_in_)
        return lin.F_p(self.system_, self.chart_, U, self.order)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def score(self, X, y=None) -> float:
        """Negative largest last Cauchy increment on ``X`` (higher is better)."""
        self._check_fitted()
        X = np.asarray(X, dtype=float).reshape(-1, self.n_features_in_)
        a = lin.F_p(self.system_, self.chart_, X, self.order)
        b = lin.F_p(self.system_, self.chart_, X, max(self.order - 1, 0))
        return -float(np.max(np.linalg.norm(a - b, axis=1))) if len(X) else -math.inf
