"""Approximate RLRT for one variance component of a GLMM.

The pipeline is: PQL under the alternative, the working LMM at the PQL
solution, REML fits of that working LMM with and without the tested
component, and a p-value from either the simulated finite-sample null
(aRLRT) or the 0.5 chi2_0 : 0.5 chi2_1 mixture (as-aRLRT).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nulldist
from .exceptions import DesignError
from .lmm import RemlFit, RemlWorkspace, fit_reml
from .nulldist import NullDistribution
from .pql import GlmmSpec, PqlFit, WorkingLmm, build_working_lmm, fit_pql

ARLRT = "aRLRT"
AS_ARLRT = "as-aRLRT"

_NULL_ALIASES = {
    "finite": nulldist.FINITE_SAMPLE,
    nulldist.FINITE_SAMPLE: nulldist.FINITE_SAMPLE,
    "mixture": nulldist.CHISQ_MIXTURE,
    nulldist.CHISQ_MIXTURE: nulldist.CHISQ_MIXTURE,
}


def normalize_null_kind(kind: str) -> str:
    try:
        return _NULL_ALIASES[kind]
    except KeyError:
        raise DesignError(f"unknown null distribution {kind!r}") from None


@dataclass(frozen=True, eq=False)
class TestProblem:
    spec: GlmmSpec
    y: np.ndarray
    tested_index: int
    null_kind: str = nulldist.FINITE_SAMPLE
    B: int = nulldist.DEFAULT_B
    seed: int = 0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        S = self.spec.design.n_components
        if not 0 <= self.tested_index < S:
            raise DesignError(f"tested_index {self.tested_index} out of range for {S} components")
        object.__setattr__(self, "null_kind", normalize_null_kind(self.null_kind))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


@dataclass(frozen=True, eq=False)
class TestResult:
    statistic: float
    p_value: float
    method: str
    pql: PqlFit
    null_fit: RemlFit
    alt_fit: RemlFit
    null_distribution: NullDistribution
    tested_index: int
    warnings: tuple[str, ...] = field(default_factory=tuple)

    __test__ = False


def arlrt_statistic(wlmm: WorkingLmm, tested_index: int):
    """Return (statistic, null_fit, alt_fit) for the working LMM.

    Both fits share the same working response. The statistic is truncated
    at zero and is exactly zero when the alternative puts the tested ratio
    on the boundary.
    """
    design = wlmm.design_tilde
    S = design.n_components
    if not 0 <= tested_index < S:
        raise DesignError(f"tested_index {tested_index} out of range for {S} components")
    ws = RemlWorkspace(design, wlmm.y_tilde)
    alt = fit_reml(design, wlmm.y_tilde, workspace=ws)
    others = [s for s in range(S) if s != tested_index]
    null = fit_reml(design, wlmm.y_tilde, active=others, workspace=ws)
    if alt.ratios[tested_index] == 0.0:
        stat = 0.0
    else:
        stat = max(0.0, 2.0 * (alt.rel - null.rel))
    return stat, null, alt


def _null_for(problem: TestProblem, wlmm: WorkingLmm, alt: RemlFit) -> NullDistribution:
    if problem.null_kind == nulldist.CHISQ_MIXTURE:
        return nulldist.mixture_null()
    design = wlmm.design_tilde
    mus = nulldist.whitened_eigenvalues(design, problem.tested_index, alt.ratios)
    return nulldist.finite_null(mus, design.N, design.p, problem.B, problem.seed)


def run_test(problem: TestProblem) -> TestResult:
    """Full pipeline from generalized response to p-value."""
    pql = fit_pql(problem.spec, problem.y)
    wlmm = build_working_lmm(pql, problem.spec, problem.y)
    stat, null_fit, alt_fit = arlrt_statistic(wlmm, problem.tested_index)
    null = _null_for(problem, wlmm, alt_fit)
    p = nulldist.pvalue(stat, null)
    warnings = list(pql.warnings)
    for label, f in (("null", null_fit), ("alternative", alt_fit)):
        if not f.converged:
            warnings.append(f"{label} REML fit of the working LMM did not converge")
    method = ARLRT if null.kind == nulldist.FINITE_SAMPLE else AS_ARLRT
    return TestResult(
        statistic=stat,
        p_value=p,
        method=method,
        pql=pql,
        null_fit=null_fit,
        alt_fit=alt_fit,
        null_distribution=null,
        tested_index=problem.tested_index,
        warnings=tuple(warnings),
    )


def as_arlrt(problem: TestProblem) -> TestResult:
    """Same statistic as ``run_test``, p-value from the chi-square mixture."""
    mixture = TestProblem(problem.spec, problem.y, problem.tested_index,
                          nulldist.CHISQ_MIXTURE, problem.B, problem.seed)
    return run_test(mixture)
