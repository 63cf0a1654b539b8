"""Penalized quasi-likelihood for a Poisson random-intercept model."""

import numpy as np

from vcgate import expfam
from vcgate.lmm import LmmDesign, RandomTerm
from vcgate.pql import GlmmSpec, build_working_lmm, fit_pql

rng = np.random.default_rng(3)
n_groups, per_group = 15, 10
N = n_groups * per_group
groups = np.repeat(np.arange(n_groups), per_group)
X = np.column_stack([np.ones(N), rng.uniform(size=N)])
Z = np.eye(n_groups)[groups]
eta = 0.5 + 0.8 * X[:, 1] + Z @ rng.normal(0, 0.7, n_groups)
y = rng.poisson(np.exp(eta)).astype(float)

spec = GlmmSpec(expfam.poisson(), LmmDesign(X, (RandomTerm(Z, name="group"),)))
fit = fit_pql(spec, y)
print(f"converged after {fit.iterations} iterations: {fit.converged}")
print("beta      ", np.round(fit.beta, 3), "(truth [0.5, 0.8])")
print("sigma2    ", np.round(fit.sigma2, 3), "(truth 0.49)")
print("sigma2_e  ", round(fit.sigma2_e, 3), "(close to 1 without overdispersion)")

# The working LMM is what the test statistic is computed on.
wlmm = build_working_lmm(fit, spec, y)
print("working response, first five:", np.round(wlmm.y_tilde[:5], 3))
