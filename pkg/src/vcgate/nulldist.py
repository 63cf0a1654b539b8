"""Null distributions for testing one variance component on the boundary.

Two nulls are provided:

* the finite-sample null of the RLRT for a single variance component,
  simulated from its spectral representation. With ``mu_s`` the
  eigenvalues of ``Z'(I - H_X)Z``, ``w_s`` iid N(0, 1) and
  ``R ~ chi2(N - p - K)``::

      RLRT = sup_{lambda >= 0} (N - p) log(1 + N(lambda) / D(lambda))
                               - sum_s log(1 + lambda mu_s)
      N(lambda) = sum_s lambda mu_s / (1 + lambda mu_s) w_s^2
      D(lambda) = sum_s w_s^2 / (1 + lambda mu_s) + R

* the asymptotic 0.5 chi2_0 : 0.5 chi2_1 mixture.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import (
    DesignError,
    InsufficientDfError,
    InvalidNullError,
    InvalidStatisticError,
)
from .lmm import LmmDesign

FINITE_SAMPLE = "finite_sample"
CHISQ_MIXTURE = "chisq_mixture"

DEFAULT_B = 10_000
GRID_SIZE = 200
GRID_DECADES = 5.0
CHUNK = 2_000


@dataclass(frozen=True, eq=False)
class NullDistribution:
    kind: str
    samples: np.ndarray | None = None
    seed: int | None = None
    eigenvalues: np.ndarray | None = None
    N: int | None = None
    p: int | None = None

    @property
    def B(self) -> int:
        return 0 if self.samples is None else int(self.samples.size)

    @property
    def zero_mass(self) -> float | None:
        if self.samples is None:
            return None
        return float(np.mean(self.samples == 0.0))

    def summary(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == FINITE_SAMPLE:
            out.update(B=self.B, seed=self.seed, zero_mass=self.zero_mass,
                       n_eigenvalues=int(self.eigenvalues.size))
        return out


def _orthonormal_basis(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.size and d.min() <= 1e-10 * max(d.max(), 1.0):
        raise DesignError("fixed-effect design X is rank deficient")
    return Q


def projected_eigenvalues(X, Z) -> np.ndarray:
    """Nonincreasing eigenvalues of Z'(I - X(X'X)^{-1}X')Z, clipped at 0."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[1] < 1:
        raise DesignError("random design needs at least one column")
    Q = _orthonormal_basis(X)
    Zp = Z - Q @ (Q.T @ Z)
    mus = np.linalg.eigvalsh(Zp.T @ Zp)[::-1]
    return np.where(mus < 1e-10 * max(1.0, mus[0]), 0.0, mus)


def whitened_eigenvalues(design: LmmDesign, tested: int, ratios) -> np.ndarray:
    """Projected eigenvalues of the tested term after whitening out nuisances.

    Nuisance components s != tested are held at ``ratios[s]``. The result is
    the spectrum of ``Zt' P0 Zt``, where ``Zt = Z_tested D^{1/2}`` and ``P0``
    is the REML projection under ``V0 = I + sum_{s != tested} lambda_s Z_s D_s Z_s'``.
    This equals the plain projected spectrum of the designs whitened by the
    symmetric root of ``V0``, without forming that N x N root.
    """
    ratios = np.asarray(ratios, dtype=float)
    Q = _orthonormal_basis(design.X)

    def project(A):
        return A - Q @ (Q.T @ A)

    Zt = project(design.randoms[tested].effective_Z)
    nuis = [
        np.sqrt(ratios[s]) * r.effective_Z
        for s, r in enumerate(design.randoms)
        if s != tested and ratios[s] > 0
    ]
    M = Zt.T @ Zt
    if nuis:
        Zn = project(np.hstack(nuis))
        C = np.eye(Zn.shape[1]) + Zn.T @ Zn
        cross = Zn.T @ Zt
        M = M - cross.T @ np.linalg.solve(C, cross)
    M = 0.5 * (M + M.T)
    mus = np.linalg.eigvalsh(M)[::-1]
    return np.where(mus < 1e-10 * max(1.0, mus[0]), 0.0, mus)


def lambda_grid(mus) -> np.ndarray:
    """{0} plus log-spaced points spanning [1e-5, 1e5] / max(mu)."""
    mu_max = float(np.max(mus))
    pos = np.logspace(-GRID_DECADES, GRID_DECADES, GRID_SIZE) / mu_max
    return np.concatenate([[0.0], pos])


def _simulate_chunk(mus, lam, n_minus_p, df_resid, size, rng) -> np.ndarray:
    w2 = rng.standard_normal((size, mus.size)) ** 2
    R = rng.chisquare(df_resid, size) if df_resid > 0 else np.zeros(size)
    lm = np.outer(lam, mus)  # G x K
    num = w2 @ (lm / (1.0 + lm)).T
    den = w2 @ (1.0 / (1.0 + lm)).T + R[:, None]
    penalty = np.log1p(lm).sum(axis=1)
    vals = n_minus_p * np.log1p(num / den) - penalty
    # grid point lambda = 0 contributes exactly 0
    vals[:, 0] = 0.0
    return np.maximum(vals.max(axis=1), 0.0)


def _worker_count(B: int) -> int:
    cap = os.environ.get("VCGATE_THREADS")
    n = int(cap) if cap else 1
    return max(1, min(n, -(-B // CHUNK)))


def simulate_finite_null(mus, N: int, p: int, B: int = DEFAULT_B, seed: int = 0) -> np.ndarray:
    """Draw ``B`` values from the finite-sample RLRT null.

    Chunks of draws use independent substreams spawned from ``seed``, so
    the output does not depend on how many workers run them.
    """
    mus = np.asarray(mus, dtype=float).ravel()
    K = mus.size
    df_resid = N - p - K
    if df_resid < 1:
        raise InsufficientDfError(f"N - p - K = {df_resid}; need at least 1")
    if B < 1:
        raise InvalidNullError("B must be at least 1")
    if not np.any(mus > 0):
        return np.zeros(B)
    lam = lambda_grid(mus)
    sizes = [min(CHUNK, B - start) for start in range(0, B, CHUNK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        return _simulate_chunk(mus, lam, N - p, df_resid, sizes[i],
                               np.random.default_rng(streams[i]))

    workers = _worker_count(B)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    return np.concatenate(parts)


def finite_null(mus, N: int, p: int, B: int = DEFAULT_B, seed: int = 0) -> NullDistribution:
    mus = np.asarray(mus, dtype=float)
    samples = simulate_finite_null(mus, N, p, B, seed)
    return NullDistribution(FINITE_SAMPLE, samples=samples, seed=seed,
                            eigenvalues=mus, N=N, p=p)


def mixture_null() -> NullDistribution:
    return NullDistribution(CHISQ_MIXTURE)


def _check_stat(stat) -> float:
    stat = float(stat)
    if not stat >= 0:
        raise InvalidStatisticError(f"test statistic must be nonnegative, got {stat}")
    return stat


def mixture_pvalue(stat) -> float:
    """P-value under 0.5 chi2_0 : 0.5 chi2_1."""
    stat = _check_stat(stat)
    if stat == 0:
        return 1.0
    return 0.5 * float(stats.chi2.sf(stat, 1))


def empirical_pvalue(stat, null: NullDistribution) -> float:
    """Monte-Carlo p-value (1 + #{samples >= stat}) / (B + 1)."""
    stat = _check_stat(stat)
    if null.kind != FINITE_SAMPLE:
        raise InvalidNullError("empirical p-values need a simulated null")
    if null.samples is None or null.samples.size == 0:
        raise InvalidNullError("null distribution has no samples")
    exceed = int(np.count_nonzero(null.samples >= stat))
    return (1 + exceed) / (null.samples.size + 1)


def pvalue(stat, null: NullDistribution) -> float:
    if null.kind == CHISQ_MIXTURE:
        return mixture_pvalue(stat)
    return empirical_pvalue(stat, null)
