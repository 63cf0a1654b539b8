"""Fit a linear mixed model with one random intercept by REML."""

import numpy as np

from vcgate.lmm import LmmDesign, RandomTerm, fit_reml, restricted_log_lik

rng = np.random.default_rng(1)
n_groups, per_group = 12, 8
N = n_groups * per_group
groups = np.repeat(np.arange(n_groups), per_group)

X = np.column_stack([np.ones(N), rng.uniform(size=N)])
Z = np.eye(n_groups)[groups]
y = X @ [2.0, -1.0] + Z @ rng.normal(0, 0.8, n_groups) + rng.normal(0, 0.5, N)

design = LmmDesign(X, (RandomTerm(Z, name="group"),))
fit = fit_reml(design, y)
print("beta        ", np.round(fit.beta, 3))
print("sigma2_e    ", round(fit.sigma2_e, 4), "(truth 0.25)")
print("sigma2      ", np.round(fit.sigma2, 4), "(truth 0.64)")
print("ratio       ", np.round(fit.ratios, 4))
print("REL         ", round(fit.rel, 4))

# The restricted log-likelihood profile peaks at the fitted ratio.
for r in (0.0, 0.5 * fit.ratios[0], fit.ratios[0], 2 * fit.ratios[0]):
    print(f"  REL(lambda={r:7.3f}) = {restricted_log_lik(design, y, [r]):.4f}")

# Pinning a component to zero gives the null fit used by the test.
null = fit_reml(design, y, active=[])
print("null REL    ", round(null.rel, 4))
print("RLRT        ", round(2 * (fit.rel - null.rel), 3))
