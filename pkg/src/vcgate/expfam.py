"""Exponential-family responses with their canonical links.

Four families are supported: Normal (identity link), Bernoulli and
Binomial (logit link) and Poisson (log link). Binomial responses are
stored as proportions ``successes / denominator`` so that the working
response has the same form for every family; the denominator only
enters through the variance function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .exceptions import InvalidInputError, InvalidMeanError, SingularWeightError

NORMAL = "normal"
BERNOULLI = "bernoulli"
BINOMIAL = "binomial"
POISSON = "poisson"

IDENTITY = "identity"
LOGIT = "logit"
LOG = "log"

CANONICAL_LINK = {NORMAL: IDENTITY, BERNOULLI: LOGIT, BINOMIAL: LOGIT, POISSON: LOG}

# Linear-predictor clamps applied before mapping to the mean scale.
ETA_BOUNDS = {LOGIT: 15.0, LOG: 30.0}


@dataclass(frozen=True)
class Link:
    kind: str

    def __post_init__(self):
        if self.kind not in (IDENTITY, LOGIT, LOG):
            raise InvalidInputError(f"unknown link {self.kind!r}")


@dataclass(frozen=True)
class Family:
    """Response distribution.

    ``denominator`` is the number of trials per observation and is only
    meaningful for the Binomial family; it may be a scalar or one value
    per observation. ``dispersion`` is the Normal residual variance and is
    fixed at 1 for the other families.
    """

    kind: str
    denominator: int | np.ndarray | None = None
    dispersion: float = 1.0
    link: Link = field(init=False)

    def __post_init__(self):
        if self.kind not in CANONICAL_LINK:
            raise InvalidInputError(f"unknown family {self.kind!r}")
        if self.kind == BINOMIAL:
            if self.denominator is None:
                raise InvalidInputError("binomial family requires a denominator")
            den = np.asarray(self.denominator)
            if np.any(den < 1) or np.any(den != np.round(den)):
                raise InvalidInputError("binomial denominator must be a positive integer")
        elif self.denominator is not None:
            raise InvalidInputError(f"{self.kind} family takes no denominator")
        if self.kind != NORMAL and self.dispersion != 1.0:
            raise InvalidInputError(f"{self.kind} dispersion is fixed at 1")
        if not self.dispersion > 0:
            raise InvalidInputError("dispersion must be positive")
        object.__setattr__(self, "link", Link(CANONICAL_LINK[self.kind]))

    @property
    def name(self) -> str:
        return self.kind


def normal(dispersion: float = 1.0) -> Family:
    return Family(NORMAL, dispersion=dispersion)


def bernoulli() -> Family:
    return Family(BERNOULLI)


def binomial(denominator) -> Family:
    return Family(BINOMIAL, denominator=denominator)


def poisson() -> Family:
    return Family(POISSON)


def make_family(name: str, denominator=None) -> Family:
    name = name.lower()
    if name == BINOMIAL:
        return binomial(denominator)
    return Family(name)


def _as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _check_mean(link: Link, mu: np.ndarray, closed_error=InvalidMeanError):
    if link.kind == LOGIT:
        bad = ~((mu > 0) & (mu < 1))
    elif link.kind == LOG:
        bad = ~(mu > 0)
    else:
        bad = ~np.isfinite(mu)
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        value = np.atleast_1d(mu)[idx]
        raise closed_error(f"mean {value!r} at index {idx} outside the open domain of the {link.kind} link")


def link_apply(link: Link, mu):
    """Evaluate g(mu)."""
    mu = _as_float_array(mu)
    _check_mean(link, mu)
    if link.kind == LOGIT:
        return logit(mu)
    if link.kind == LOG:
        return np.log(mu)
    return mu.copy()


def link_inverse(link: Link, eta):
    """Evaluate g^{-1}(eta)."""
    eta = _as_float_array(eta)
    if not np.all(np.isfinite(eta)):
        raise InvalidInputError("linear predictor must be finite")
    if link.kind == LOGIT:
        return expit(eta)
    if link.kind == LOG:
        return np.exp(eta)
    return eta.copy()


def link_derivative(link: Link, mu):
    """g'(mu); strictly positive on the open domain."""
    mu = _as_float_array(mu)
    _check_mean(link, mu, SingularWeightError)
    if link.kind == LOGIT:
        return 1.0 / (mu * (1.0 - mu))
    if link.kind == LOG:
        return 1.0 / mu
    return np.ones_like(mu)


def variance_function(family: Family, mu):
    """Conditional variance Var(Y | u) of a single observation."""
    mu = _as_float_array(mu)
    _check_mean(family.link, mu, SingularWeightError)
    if family.kind == NORMAL:
        return np.full_like(mu, family.dispersion)
    if family.kind == BERNOULLI:
        return mu * (1.0 - mu)
    if family.kind == BINOMIAL:
        return mu * (1.0 - mu) / np.asarray(family.denominator, dtype=float)
    return mu.copy()


def clamp_eta(link: Link, eta) -> tuple[np.ndarray, int]:
    """Clamp the linear predictor to keep weights away from zero.

    Returns the clamped array and the number of entries that were moved.
    """
    eta = _as_float_array(eta)
    bound = ETA_BOUNDS.get(link.kind)
    if bound is None:
        return eta, 0
    clamped = np.clip(eta, -bound, bound)
    return clamped, int(np.count_nonzero(clamped != eta))


def validate_response(family: Family, y) -> np.ndarray:
    y = _as_float_array(y)
    if y.ndim != 1:
        raise InvalidInputError("response must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response contains non-finite values")
    if family.kind in (BERNOULLI, BINOMIAL):
        if np.any((y < 0) | (y > 1)):
            raise InvalidInputError(f"{family.kind} responses must be proportions in [0, 1]")
        if family.kind == BERNOULLI and np.any((y != 0) & (y != 1)):
            raise InvalidInputError("bernoulli responses must be 0 or 1")
        if family.kind == BINOMIAL:
            counts = y * np.asarray(family.denominator, dtype=float)
            if np.any(np.abs(counts - np.round(counts)) > 1e-8):
                raise InvalidInputError("binomial proportions must be multiples of 1/denominator")
    elif family.kind == POISSON:
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InvalidInputError("poisson responses must be nonnegative integers")
    return y


def sample_response(family: Family, mu, rng: np.random.Generator) -> np.ndarray:
    """Draw one response per mean; Normal uses ``dispersion`` as variance."""
    mu = _as_float_array(mu)
    if family.kind == NORMAL:
        return mu + np.sqrt(family.dispersion) * rng.standard_normal(mu.shape)
    if family.kind == BERNOULLI:
        return (rng.random(mu.shape) < mu).astype(float)
    if family.kind == BINOMIAL:
        den = np.broadcast_to(np.asarray(family.denominator), mu.shape)
        return rng.binomial(den, mu) / den
    return rng.poisson(mu).astype(float)
