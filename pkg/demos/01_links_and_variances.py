"""Canonical links, their inverses and the variance functions behind PQL weights."""

import numpy as np

from vcgate import expfam
from vcgate.pql import compute_weights

# Each family carries its canonical link.
for family in (expfam.normal(), expfam.bernoulli(), expfam.binomial(4), expfam.poisson()):
    print(f"{family.kind:10s} link={family.link.kind}")

mu = np.array([0.1, 0.5, 0.9])
logit = expfam.Link("logit")
eta = expfam.link_apply(logit, mu)
print("logit(mu)       ", np.round(eta, 4))
print("back to mu      ", expfam.link_inverse(logit, eta))
print("g'(mu)          ", np.round(expfam.link_derivative(logit, mu), 4))
print("Bernoulli v(mu) ", expfam.variance_function(expfam.bernoulli(), mu))

# For a canonical link the working weight equals v(mu).
print("PQL weights     ", np.round(compute_weights(eta, expfam.bernoulli()), 4))

# Extreme linear predictors are clamped rather than overflowing.
clamped, count = expfam.clamp_eta(logit, np.array([-40.0, 0.0, 40.0]))
print("clamped eta     ", clamped, f"({count} values clamped)")
