"""REML for Gaussian linear mixed models with known-structure variance components.

The model is ``y = X beta + sum_s Z_s u_s + e`` with ``u_s ~ N(0, sigma2_s D_s)``
and ``e ~ N(0, sigma2_e I)``. Everything is parameterised by the variance
ratios ``lambda_s = sigma2_s / sigma2_e`` so that the marginal covariance is
``sigma2_e * V(lambda)`` with ``V(lambda) = I + sum_s lambda_s Z_s D_s Z_s'``.

The profiled restricted log-likelihood (additive constants dropped) is

    REL(lambda) = -1/2 [log|V| + log|X'V^{-1}X| + (N - p) log(y'Py)]

with ``P = V^{-1} - V^{-1}X(X'V^{-1}X)^{-1}X'V^{-1}``. It is evaluated on
error contrasts: X is projected out once with a QR factorisation, after
which each evaluation only factors a (2q x q) stacked matrix, where q is
the total number of random-effect columns. No N x N matrix is formed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg, optimize

from .exceptions import DegenerateResponseError, DesignError

# Interior search range for log(lambda), relative to each component's scale.
LOG_RATIO_SPAN = np.log(1e8)
COARSE_GRID_1D = 33
COARSE_GRID_ND = 9
# Interior optima must beat the boundary by more than this to be reported.
BOUNDARY_TIE = 1e-10
MAX_EVALS = 200


def _psd_root(D: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Return L with L @ L.T == D, dropping null directions of D."""
    w, U = np.linalg.eigh(D)
    if w.min() < -tol * max(1.0, abs(w).max()):
        raise DesignError("random-effect structure matrix D is not positive semi-definite")
    keep = w > tol * max(1.0, w.max())
    return U[:, keep] * np.sqrt(w[keep])


@dataclass(frozen=True, eq=False)
class RandomTerm:
    """One random-effect vector: design ``Z`` (N x q) and structure ``D`` (q x q)."""

    Z: np.ndarray
    D: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if Z.ndim != 2:
            raise DesignError("Z must be a matrix")
        q = Z.shape[1]
        D = np.eye(q) if self.D is None else np.asarray(self.D, dtype=float)
        if D.shape != (q, q):
            raise DesignError(f"D has shape {D.shape}, expected {(q, q)}")
        if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, abs(D).max())):
            raise DesignError("D must be symmetric")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "D", D)
        self.root  # rejects a non-PSD D up front

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @cached_property
    def root(self) -> np.ndarray:
        return _psd_root(self.D)

    @cached_property
    def effective_Z(self) -> np.ndarray:
        """Z D^{1/2}, so that the term has iid unit-variance coefficients."""
        return self.Z @ self.root


@dataclass(frozen=True, eq=False)
class LmmDesign:
    X: np.ndarray
    randoms: tuple[RandomTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        randoms = tuple(
            r if isinstance(r, RandomTerm) else RandomTerm(*r) for r in self.randoms
        )
        N, p = X.shape
        for r in randoms:
            if r.Z.shape[0] != N:
                raise DesignError(f"random term {r.name!r} has {r.Z.shape[0]} rows, X has {N}")
        if p >= N:
            raise DesignError(f"need more observations than fixed effects (N={N}, p={p})")
        if np.linalg.matrix_rank(X) < p:
            raise DesignError("fixed-effect design X is rank deficient")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "randoms", randoms)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.randoms)

    @property
    def names(self) -> list[str]:
        return [r.name or f"re{i}" for i, r in enumerate(self.randoms)]

    def row_scaled(self, s: np.ndarray) -> LmmDesign:
        """Design with every row multiplied by ``s[i]``."""
        s = np.asarray(s, dtype=float)[:, None]
        return LmmDesign(
            s * self.X, tuple(RandomTerm(s * r.Z, r.D, r.name) for r in self.randoms)
        )

    def permuted(self, order: np.ndarray) -> LmmDesign:
        return LmmDesign(
            self.X[order], tuple(RandomTerm(r.Z[order], r.D, r.name) for r in self.randoms)
        )


@dataclass(frozen=True, eq=False)
class RemlFit:
    beta: np.ndarray
    sigma2_e: float
    ratios: np.ndarray
    rel: float
    converged: bool
    blups: tuple[np.ndarray, ...]
    n_evals: int = 0

    @property
    def sigma2(self) -> np.ndarray:
        """Variance components sigma2_s = lambda_s * sigma2_e."""
        return self.ratios * self.sigma2_e


def _check_ratios(design: LmmDesign, ratios) -> np.ndarray:
    ratios = np.atleast_1d(np.asarray(ratios, dtype=float))
    if ratios.shape != (design.n_components,):
        raise DesignError(
            f"expected {design.n_components} variance ratios, got {ratios.shape[0]}"
        )
    if np.any(ratios < 0) or not np.all(np.isfinite(ratios)):
        raise DesignError("variance ratios must be finite and nonnegative")
    return ratios


def build_marginal_cov(design: LmmDesign, ratios) -> np.ndarray:
    """V(lambda) = I + sum_s lambda_s Z_s D_s Z_s' (dense, N x N)."""
    ratios = _check_ratios(design, ratios)
    V = np.eye(design.N)
    for lam, r in zip(ratios, design.randoms):
        if lam > 0:
            V += lam * (r.Z @ r.D @ r.Z.T)
    return V


class RemlWorkspace:
    """Precomputed factorisations for repeated REL evaluations on one (design, y)."""

    def __init__(self, design: LmmDesign, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (design.N,):
            raise DesignError(f"response has shape {y.shape}, expected ({design.N},)")
        self.design = design
        self.N, self.p = design.N, design.p
        self.Qx, self.Rx = np.linalg.qr(design.X)
        self.logdet_xtx = 2.0 * np.sum(np.log(np.abs(np.diag(self.Rx))))

        blocks = [r.effective_Z for r in design.randoms]
        self.slices = []
        start = 0
        for b in blocks:
            self.slices.append(slice(start, start + b.shape[1]))
            start += b.shape[1]
        self.q = start
        self.Zc = np.hstack(blocks) if blocks else np.zeros((self.N, 0))

        self.qty = self.Qx.T @ y
        yp = y - self.Qx @ self.qty
        if np.dot(yp, yp) <= (1e-12 * np.linalg.norm(y)) ** 2 or not np.any(yp):
            raise DegenerateResponseError("response lies in the column space of X")
        self.qtz = self.Qx.T @ self.Zc
        Zp = self.Zc - self.Qx @ self.qtz
        self.Zp = Zp
        if self.q:
            Qz, self.Rz = np.linalg.qr(Zp)
            self.c = Qz.T @ yp
            e_perp = yp - Qz @ self.c
        else:
            self.Rz = np.zeros((0, 0))
            self.c = np.zeros(0)
            e_perp = yp
        self.ee = float(np.dot(e_perp, e_perp))
        self.y = y
        self.n_evals = 0

    def component_scales(self) -> np.ndarray:
        """Largest eigenvalue of each projected component cross-product."""
        out = []
        for sl in self.slices:
            Zs = self.Zp[:, sl]
            top = np.linalg.norm(Zs, 2) ** 2 if Zs.size else 0.0
            out.append(top if top > 0 else 1.0)
        return np.array(out)

    def _column_scale(self, ratios: np.ndarray) -> np.ndarray:
        g = np.empty(self.q)
        for lam, sl in zip(ratios, self.slices):
            g[sl] = np.sqrt(lam)
        return g

    def solve(self, ratios) -> tuple[float, float, np.ndarray]:
        """Return (REL, y'Py, a) where a are the whitened random coefficients."""
        self.n_evals += 1
        ratios = np.asarray(ratios, dtype=float)
        q = self.q
        if q == 0 or not np.any(ratios > 0):
            ytpy = self.ee + float(np.dot(self.c, self.c))
            logdet_m = 0.0
            a = np.zeros(q)
        else:
            g = self._column_scale(ratios)
            A = np.vstack([self.Rz * g, np.eye(q)])
            rhs = np.concatenate([self.c, np.zeros(q)])
            Qa, Ra = np.linalg.qr(A)
            logdet_m = 2.0 * np.sum(np.log(np.abs(np.diag(Ra))))
            a = linalg.solve_triangular(Ra, Qa.T @ rhs)
            resid = rhs - A @ a
            ytpy = self.ee + float(np.dot(resid, resid))
        if not ytpy > 0:
            raise DegenerateResponseError("y'Py is not positive")
        rel = -0.5 * (logdet_m + self.logdet_xtx + (self.N - self.p) * np.log(ytpy))
        return float(rel), ytpy, a

    def rel(self, ratios) -> float:
        return self.solve(ratios)[0]

    def fit_at(self, ratios, converged: bool = True) -> RemlFit:
        ratios = np.asarray(ratios, dtype=float)
        rel, ytpy, a = self.solve(ratios)
        u = self._column_scale(ratios) * a if self.q else a
        beta = linalg.solve_triangular(self.Rx, self.qty - self.qtz @ u)
        blups = tuple(
            r.root @ u[sl] for r, sl in zip(self.design.randoms, self.slices)
        )
        return RemlFit(
            beta=beta,
            sigma2_e=ytpy / (self.N - self.p),
            ratios=ratios.copy(),
            rel=rel,
            converged=converged,
            blups=blups,
            n_evals=self.n_evals,
        )


def restricted_log_lik(design: LmmDesign, y, ratios) -> float:
    """Profiled restricted log-likelihood at variance ratios ``ratios``."""
    ratios = _check_ratios(design, ratios)
    return RemlWorkspace(design, y).rel(ratios)


def _optimize_interior(ws: RemlWorkspace, base: np.ndarray, free: list[int],
                       bounds: list[tuple[float, float]]):
    """Maximise REL over log-ratios of ``free`` with everything else at ``base``."""

    def ratios_at(logs):
        r = base.copy()
        r[free] = np.exp(logs)
        return r

    def neg(logs):
        return -ws.rel(ratios_at(np.atleast_1d(logs)))

    if len(free) == 1:
        lo, hi = bounds[0]
        grid = np.linspace(lo, hi, COARSE_GRID_1D)
        vals = np.array([neg(x) for x in grid])
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = optimize.minimize_scalar(
            neg, bounds=(a, b), method="bounded",
            options={"xatol": 1e-9, "maxiter": MAX_EVALS},
        )
        x, fx, ok = np.array([res.x]), res.fun, bool(res.success)
        if vals[i] < fx:
            x, fx = np.array([grid[i]]), vals[i]
        return ratios_at(x), -fx, ok

    axes = [np.linspace(lo, hi, COARSE_GRID_ND) for lo, hi in bounds]
    best_x, best_f = None, np.inf
    for point in itertools.product(*axes):
        f = neg(np.array(point))
        if f < best_f:
            best_x, best_f = np.array(point), f
    res = optimize.minimize(
        neg, best_x, method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-12, "maxfev": MAX_EVALS * len(free),
                 "initial_simplex": best_x + np.vstack([np.zeros(len(free)),
                                                        0.5 * np.eye(len(free))])},
    )
    x = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
    fx = neg(x)
    ok = bool(res.success)
    if best_f < fx:
        x, fx = best_x, best_f
    return ratios_at(x), -fx, ok


def fit_reml(design: LmmDesign, y, active=None, fixed_ratios=None,
             workspace: RemlWorkspace | None = None) -> RemlFit:
    """Maximise REL over ratios of the ``active`` components.

    Inactive components are pinned at ``fixed_ratios`` (default 0). Each
    active component may sit exactly on the boundary: every pattern of
    active components pinned at zero is optimised separately and the best
    pattern wins, so a boundary optimum is reported as an exact 0.
    """
    ws = workspace if workspace is not None else RemlWorkspace(design, y)
    S = design.n_components
    active = list(range(S)) if active is None else sorted(set(int(i) for i in active))
    for i in active:
        if not 0 <= i < S:
            raise DesignError(f"component index {i} out of range")
    base = np.zeros(S) if fixed_ratios is None else _check_ratios(design, fixed_ratios).copy()
    base[active] = 0.0
    if not active:
        return ws.fit_at(base)

    scales = ws.component_scales()
    bounds = {i: (np.log(1.0 / scales[i]) - LOG_RATIO_SPAN,
                  np.log(1.0 / scales[i]) + LOG_RATIO_SPAN) for i in active}

    # candidates ordered from most to fewest zeros, so ties favour the boundary
    best = None
    for n_free in range(len(active) + 1):
        for free in itertools.combinations(active, n_free):
            if not free:
                ratios, rel, ok = base.copy(), ws.rel(base), True
            else:
                ratios, rel, ok = _optimize_interior(
                    ws, base, list(free), [bounds[i] for i in free])
            if best is None or rel > best[1] + BOUNDARY_TIE:
                best = (ratios, rel, ok)
    ratios, _, ok = best
    return ws.fit_at(ratios, converged=ok)
