"""Penalized quasi-likelihood (PQL) fitting and the induced working LMM.

PQL alternates between linearising the response around the current linear
predictor and fitting a weighted Gaussian LMM to the resulting working
variate. At convergence the standardized working response

    y_tilde = W^{1/2} [eta + g'(mu)(y - mu)],   w_i = 1 / (g'(mu_i)^2 v(mu_i))

is treated as Gaussian data for the design rows scaled by sqrt(w_i).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import expfam
from .exceptions import DegenerateResponseError, DesignError, InvalidInputError
from .expfam import Family, Link
from .lmm import LmmDesign, RemlFit, fit_reml

logger = logging.getLogger(__name__)

PQL_TOL = 1e-6
PQL_MAX_ITER = 50
GLM_TOL = 1e-10
GLM_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class GlmmSpec:
    family: Family
    design: LmmDesign
    link: Link | None = None

    def __post_init__(self):
        link = self.family.link if self.link is None else self.link
        if link != self.family.link:
            raise DesignError(
                f"{self.family.kind} requires its canonical {self.family.link.kind} link"
            )
        object.__setattr__(self, "link", link)


@dataclass(frozen=True, eq=False)
class PqlFit:
    eta_star: np.ndarray
    mu_star: np.ndarray
    w_star: np.ndarray
    beta: np.ndarray
    ratios: np.ndarray
    sigma2_e: float
    iterations: int
    converged: bool
    family: Family
    lmm_fit: RemlFit | None = None
    clamped: int = 0
    warnings: tuple[str, ...] = field(default_factory=tuple)

    @property
    def sigma2(self) -> np.ndarray:
        """Variance components on the random-effect scale."""
        return self.ratios * self.sigma2_e


@dataclass(frozen=True, eq=False)
class WorkingLmm:
    y_tilde: np.ndarray
    design_tilde: LmmDesign


def _linearise(eta, family: Family, link: Link):
    eta, n_clamped = expfam.clamp_eta(link, eta)
    mu = expfam.link_inverse(link, eta)
    # expit/exp can still round to the boundary inside the clamp range for
    # extreme dispersion-free families; nudge those by one ulp
    if link.kind == expfam.LOGIT:
        mu = np.clip(mu, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    gprime = expfam.link_derivative(link, mu)
    var = expfam.variance_function(family, mu)
    w = 1.0 / (gprime**2 * var)
    return eta, mu, gprime, w, n_clamped


def compute_weights(eta, family: Family, link: Link | None = None) -> np.ndarray:
    link = family.link if link is None else link
    return _linearise(np.asarray(eta, dtype=float), family, link)[3]


def working_response(y, eta, family: Family, link: Link | None = None) -> np.ndarray:
    link = family.link if link is None else link
    eta, mu, gprime, w, _ = _linearise(np.asarray(eta, dtype=float), family, link)
    return np.sqrt(w) * (eta + gprime * (np.asarray(y, dtype=float) - mu))


def _check_not_constant(y):
    if np.ptp(y) == 0:
        raise DegenerateResponseError("response is constant; nothing to test")


def fit_glm(X, y, family: Family) -> np.ndarray:
    """Unpenalised IRLS estimate of the fixed effects."""
    link = family.link
    y = np.asarray(y, dtype=float)
    if family.kind == expfam.NORMAL:
        return np.linalg.lstsq(X, y, rcond=None)[0]
    mu = (y + y.mean()) / 2.0
    eta = expfam.link_apply(link, mu)
    beta = np.zeros(X.shape[1])
    dev_old = np.inf
    for _ in range(GLM_MAX_ITER):
        eta, mu, gprime, w, _ = _linearise(eta, family, link)
        z = eta + gprime * (y - mu)
        sw = np.sqrt(w)
        beta = np.linalg.lstsq(sw[:, None] * X, sw * z, rcond=None)[0]
        eta = X @ beta
        dev = float(np.sum(w * (z - eta) ** 2))
        if abs(dev - dev_old) <= GLM_TOL * (abs(dev) + 0.1):
            break
        dev_old = dev
    return beta


def _relative_change(new, old):
    new, old = np.asarray(new), np.asarray(old)
    if new.size == 0:
        return 0.0
    return float(np.max(np.abs(new - old) / (np.abs(old) + 1e-4)))


def fit_pql(spec: GlmmSpec, y, tol: float = PQL_TOL, max_iter: int = PQL_MAX_ITER) -> PqlFit:
    """Fit the GLMM by PQL with REML working fits, all components free."""
    family, link, design = spec.family, spec.link, spec.design
    y = expfam.validate_response(family, y)
    if y.shape != (design.N,):
        raise InvalidInputError(f"response length {y.shape[0]} does not match design N={design.N}")
    _check_not_constant(y)

    beta = fit_glm(design.X, y, family)
    eta = design.X @ beta
    sigma2 = np.zeros(design.n_components)
    sigma2_e = 1.0
    converged = False
    fit = None
    total_clamped = 0
    iteration = 0
    for iteration in range(1, max_iter + 1):
        eta_c, mu, gprime, w, n_clamped = _linearise(eta, family, link)
        total_clamped = n_clamped
        sw = np.sqrt(w)
        y_tilde = sw * (eta_c + gprime * (y - mu))
        wdesign = design.row_scaled(sw)
        fit = fit_reml(wdesign, y_tilde)
        # rows carry 1/sqrt(phi), so fit.sigma2 is already on the data scale
        # while the working residual variance is relative to phi
        new_sigma2 = fit.sigma2
        sigma2_e = fit.sigma2_e * family.dispersion
        if family.kind == expfam.NORMAL:
            family = dataclasses.replace(family, dispersion=sigma2_e)
        change = max(_relative_change(fit.beta, beta), _relative_change(new_sigma2, sigma2))
        beta, sigma2 = fit.beta, new_sigma2
        eta = design.X @ beta
        for r, u in zip(design.randoms, fit.blups):
            eta = eta + r.Z @ u
        if change < tol and iteration > 1:
            converged = True
            break
        if family.kind == expfam.NORMAL and iteration > 1:
            # the working model is exact: once phi is set, further passes only
            # rescale y_tilde and would chase optimizer round-off
            converged = True
            break

    warnings = []
    if not converged:
        warnings.append(f"PQL did not converge in {max_iter} iterations")
        logger.info(warnings[-1])
    eta_c, mu, gprime, w, n_clamped = _linearise(eta, family, link)
    if n_clamped:
        warnings.append(f"linear predictor clamped for {n_clamped} observations")
    if fit is not None and not fit.converged:
        warnings.append("working REML fit reported non-convergence")
    return PqlFit(
        eta_star=eta_c,
        mu_star=mu,
        w_star=w,
        beta=beta,
        ratios=sigma2 / sigma2_e,
        sigma2_e=sigma2_e,
        iterations=iteration,
        converged=converged,
        family=family,
        lmm_fit=fit,
        clamped=max(n_clamped, total_clamped),
        warnings=tuple(warnings),
    )


def build_working_lmm(fit: PqlFit, spec: GlmmSpec, y) -> WorkingLmm:
    """Working response and row-scaled design at the (fixed) PQL solution."""
    y = np.asarray(y, dtype=float)
    link = spec.link
    gprime = expfam.link_derivative(link, fit.mu_star)
    sw = np.sqrt(fit.w_star)
    y_tilde = sw * (fit.eta_star + gprime * (y - fit.mu_star))
    return WorkingLmm(y_tilde=y_tilde, design_tilde=spec.design.row_scaled(sw))
