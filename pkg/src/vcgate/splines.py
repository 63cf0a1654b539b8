"""Penalized B-splines and their mixed-model representation.

A cubic B-spline fit with a second-order difference penalty,
``min |y - B delta|^2 + lambda |D2 delta|^2``, is rewritten as a mixed
model ``X beta + Z u`` with ``X = [1, t]`` unpenalised and
``u ~ N(0, sigma2 I_{K-2})``. Testing ``sigma2 = 0`` then tests whether the
smooth is linear.

Knots are equally spaced and extended ``degree`` intervals past both ends
of the domain (the P-spline construction). With this choice
``sum_k k B_k(t)`` is linear in ``t``, so the penalty null space maps
exactly onto ``span{1, t}``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import DesignError, InvalidInputError


@dataclass(frozen=True)
class SplineBasisSpec:
    K: int = 30
    degree: int = 3
    domain: tuple[float, float] | None = None
    penalty_order: int = 2

    def __post_init__(self):
        if self.penalty_order != 2:
            raise DesignError("only second-order difference penalties are supported")
        if self.K < self.degree + 2:
            raise DesignError(f"basis dimension K={self.K} too small for degree {self.degree}")
        if self.domain is not None and not self.domain[0] < self.domain[1]:
            raise DesignError("spline domain must have t_min < t_max")

    def with_domain(self, t) -> SplineBasisSpec:
        if self.domain is not None:
            return self
        t = np.asarray(t, dtype=float)
        return SplineBasisSpec(self.K, self.degree, (float(t.min()), float(t.max())),
                               self.penalty_order)

    def knots(self) -> np.ndarray:
        if self.domain is None:
            raise DesignError("spline domain not set")
        lo, hi = self.domain
        n_intervals = self.K - self.degree
        h = (hi - lo) / n_intervals
        ext = h * np.arange(1, self.degree + 1)
        return np.concatenate([lo - ext[::-1], np.linspace(lo, hi, n_intervals + 1), hi + ext])


@dataclass(frozen=True, eq=False)
class SmoothDesign:
    X_poly: np.ndarray
    Z_smooth: np.ndarray
    D: np.ndarray


def bspline_design(t, spec: SplineBasisSpec) -> np.ndarray:
    """N x K B-spline basis matrix evaluated at ``t``."""
    t = np.asarray(t, dtype=float)
    spec = spec.with_domain(t)
    lo, hi = spec.domain
    # tolerate rounding at the endpoints only
    eps = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(t < lo - eps) or np.any(t > hi + eps):
        raise InvalidInputError(f"t outside the spline domain [{lo}, {hi}]")
    if t.size < spec.K:
        warnings.warn(f"fewer observations ({t.size}) than basis functions ({spec.K})",
                      stacklevel=2)
    x = np.clip(t, lo, hi)
    return BSpline.design_matrix(x, spec.knots(), spec.degree).toarray()


def difference_penalty(K: int, order: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Second-difference operator (K-2 x K) and penalty matrix D2'D2."""
    if order != 2:
        raise DesignError("only second-order differences are supported")
    if K < 4:
        raise DesignError(f"difference penalty needs K >= 4, got {K}")
    delta = np.diff(np.eye(K), n=2, axis=0)
    return delta, delta.T @ delta


def mixed_model_reparam(B, P, t) -> SmoothDesign:
    """Split a penalized spline into unpenalised linear and iid random parts.

    ``P`` must be the second-difference penalty belonging to ``B``; the
    random-effect design is ``Z = B D2'(D2 D2')^{-1}`` so that
    ``delta' P delta = |u|^2``.
    """
    B = np.asarray(B, dtype=float)
    t = np.asarray(t, dtype=float)
    K = B.shape[1]
    delta, P_expected = difference_penalty(K)
    if P is not None and not np.allclose(P, P_expected):
        raise DesignError("penalty matrix is not the second-difference penalty for this basis")
    Z = B @ np.linalg.solve(delta @ delta.T, delta).T
    X = np.column_stack([np.ones_like(t), t])
    # every smooth column must carry something beyond a line
    Q, _ = np.linalg.qr(X)
    resid = Z - Q @ (Q.T @ Z)
    col_norm = np.linalg.norm(Z, axis=0)
    if np.any(np.linalg.norm(resid, axis=0) <= 1e-10 * np.maximum(col_norm, 1.0)):
        raise DesignError("smooth design has a column inside span{1, t}")
    if np.linalg.matrix_rank(np.hstack([X, Z])) < min(K, len(t)):
        raise DesignError("reparameterised spline design is rank deficient")
    return SmoothDesign(X_poly=X, Z_smooth=Z, D=np.eye(K - 2))


def smooth_design(t, spec: SplineBasisSpec | None = None) -> SmoothDesign:
    """Basis, penalty and reparameterisation in one call."""
    spec = (spec or SplineBasisSpec()).with_domain(t)
    B = bspline_design(t, spec)
    _, P = difference_penalty(spec.K)
    return mixed_model_reparam(B, P, t)


def true_smooth(t, delta: float):
    """f(t) = 0.5 - t + 0.25 delta t exp(2 - 2t); linear when delta = 0."""
    t = np.asarray(t, dtype=float)
    return 0.5 - t + 0.25 * delta * t * np.exp(2.0 - 2.0 * t)
