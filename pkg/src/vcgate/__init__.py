"""Variance-component tests for generalized linear mixed models.

Approximate restricted likelihood ratio tests computed on the working
responses of penalized quasi-likelihood, with finite-sample and
asymptotic null distributions.
"""

__version__ = "0.1.0"
