"""Simulation models M1-M4 and type-I error / power drivers.

M1  eta = b0 + b1 x + u0_i                 test var(u0)
M2  eta = b0 + b1 x + u0_i + u1_i x        test var(u1), var(u0) = 1 nuisance
M3  eta = f(t)                             test linearity of f
M4  eta = f(t) + u0_i                      test linearity of f, var(u0) = 1 nuisance

with x ~ U[0, 1], t ~ U[0, 2] and f(t) = 0.5 - t + 0.25 delta t exp(2 - 2t).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expfam, nulldist
from .exceptions import DesignError, VcgateError
from .lmm import LmmDesign, RandomTerm
from .pql import GlmmSpec, build_working_lmm, fit_pql
from .splines import SplineBasisSpec, smooth_design, true_smooth
from .vctest import ARLRT, AS_ARLRT, arlrt_statistic

logger = logging.getLogger(__name__)

MODELS = ("M1", "M2", "M3", "M4")
METHODS = (ARLRT, AS_ARLRT)
CSV_FIELDS = ("model", "family", "n", "m", "effect", "method", "replicates",
              "rejections", "rate", "se", "failures", "seconds")
DESK_B = 2000
BINOMIAL_DENOMINATOR = 4


@dataclass(frozen=True)
class SimScenario:
    model: str
    family: str
    n: int
    m: int
    effect: float = 0.0
    nuisance: float = 1.0
    fixed_effects: tuple[float, float] = (0.0, 1.0)
    replicates: int = 1000
    alpha: float = 0.05
    seed: int = 0
    B: int = DESK_B
    K: int = 30
    denominator: int = BINOMIAL_DENOMINATOR

    def __post_init__(self):
        if self.model not in MODELS:
            raise DesignError(f"unknown model {self.model!r}")
        if self.effect < 0 or self.nuisance < 0:
            raise DesignError("variance effects must be nonnegative")
        if self.n < 1 or self.m < 1 or self.replicates < 1:
            raise DesignError("n, m and replicates must be positive")
        expfam.make_family(self.family, self.denominator)
        object.__setattr__(self, "fixed_effects", tuple(float(b) for b in self.fixed_effects))

    @property
    def tested_index(self) -> int:
        return 0 if self.model in ("M1", "M3") else 1

    def family_obj(self) -> expfam.Family:
        if self.family == expfam.BINOMIAL:
            return expfam.binomial(self.denominator)
        return expfam.make_family(self.family)

    def label(self) -> str:
        return f"{self.model}/{self.family}/n={self.n}/m={self.m}/effect={self.effect:g}"


@dataclass
class SimRow:
    model: str
    family: str
    n: int
    m: int
    effect: float
    method: str
    replicates: int
    rejections: int
    rate: float
    se: float
    failures: int
    seconds: float
    nonconverged: int = 0


@dataclass
class SimTable:
    rows: list[SimRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def rate(self, method: str, **match) -> float:
        for row in self.rows:
            if row.method == method and all(getattr(row, k) == v for k, v in match.items()):
                return row.rate
        raise KeyError(f"no row for {method} {match}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow(asdict(row))

    def to_json(self, path) -> None:
        payload = {"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def _groups(n: int, m: int) -> np.ndarray:
    return np.repeat(np.arange(n), m)


def _draw_predictor(scenario: SimScenario, rng):
    n, m = scenario.n, scenario.m
    N = n * m
    g = _groups(n, m)
    Zint = np.eye(n)[g]
    b0, b1 = scenario.fixed_effects
    family = scenario.family_obj()

    if scenario.model in ("M1", "M2"):
        x = rng.uniform(0.0, 1.0, N)
        X = np.column_stack([np.ones(N), x])
        if scenario.model == "M1":
            u0 = rng.normal(0.0, math.sqrt(scenario.effect), n)
            eta = b0 + b1 * x + u0[g]
            randoms = (RandomTerm(Zint, name="intercept"),)
        else:
            u0 = rng.normal(0.0, math.sqrt(scenario.nuisance), n)
            u1 = rng.normal(0.0, math.sqrt(scenario.effect), n)
            eta = b0 + b1 * x + u0[g] + u1[g] * x
            randoms = (RandomTerm(Zint, name="intercept"),
                       RandomTerm(Zint * x[:, None], name="slope"))
    else:
        t = rng.uniform(0.0, 2.0, N)
        eta = true_smooth(t, scenario.effect)
        smooth = smooth_design(t, SplineBasisSpec(K=scenario.K))
        X = smooth.X_poly
        if scenario.model == "M3":
            randoms = (RandomTerm(smooth.Z_smooth, smooth.D, name="smooth"),)
        else:
            u0 = rng.normal(0.0, math.sqrt(scenario.nuisance), n)
            eta = eta + u0[g]
            randoms = (RandomTerm(Zint, name="intercept"),
                       RandomTerm(smooth.Z_smooth, smooth.D, name="smooth"))

    return eta, GlmmSpec(family, LmmDesign(X, randoms))


def linear_predictor(scenario: SimScenario, replicate_index: int):
    """The true ``(eta, spec)`` behind ``generate_dataset`` for the same replicate."""
    rng = np.random.default_rng([scenario.seed, replicate_index])
    return _draw_predictor(scenario, rng)


def generate_dataset(scenario: SimScenario, replicate_index: int):
    """Simulate one dataset; returns ``(y, spec)``.

    Randomness comes from a substream keyed by (seed, replicate_index).
    """
    rng = np.random.default_rng([scenario.seed, replicate_index])
    eta, spec = _draw_predictor(scenario, rng)
    mu = expfam.link_inverse(spec.family.link, eta)
    return expfam.sample_response(spec.family, mu, rng), spec


def replicate_pvalues(scenario: SimScenario, replicate_index: int, methods=METHODS) -> dict:
    """Run one replicate; the statistic is shared by every method."""
    y, spec = generate_dataset(scenario, replicate_index)
    pql = fit_pql(spec, y)
    wlmm = build_working_lmm(pql, spec, y)
    stat, _, alt = arlrt_statistic(wlmm, scenario.tested_index)
    out = {"statistic": stat, "converged": pql.converged}
    if ARLRT in methods:
        design = wlmm.design_tilde
        mus = nulldist.whitened_eigenvalues(design, scenario.tested_index, alt.ratios)
        seed = int(np.random.SeedSequence([scenario.seed, replicate_index, 1]).generate_state(1)[0])
        null = nulldist.finite_null(mus, design.N, design.p, scenario.B, seed)
        out[ARLRT] = nulldist.empirical_pvalue(stat, null)
    if AS_ARLRT in methods:
        out[AS_ARLRT] = nulldist.mixture_pvalue(stat)
    return out


def _run_block(args):
    scenario, indices, methods = args
    results = []
    for i in indices:
        try:
            results.append(replicate_pvalues(scenario, i, methods))
        except (VcgateError, np.linalg.LinAlgError, FloatingPointError) as exc:
            results.append({"error": f"{type(exc).__name__}: {exc}"})
    return results


def _worker_count() -> int:
    cap = os.environ.get("VCGATE_THREADS")
    return max(1, int(cap)) if cap else 1


def run_scenario(scenario: SimScenario, methods=METHODS, progress=None) -> list[SimRow]:
    start = time.perf_counter()
    indices = list(range(scenario.replicates))
    workers = _worker_count()
    if workers > 1:
        blocks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_block, [(scenario, b, methods) for b in blocks]))
        results = [r for part in parts for r in part]
    else:
        results = _run_block((scenario, indices, methods))
    failures = sum("error" in r for r in results)
    ok = [r for r in results if "error" not in r]
    nonconverged = sum(not r["converged"] for r in ok)
    seconds = time.perf_counter() - start
    rows = []
    for method in methods:
        rejections = sum(r[method] <= scenario.alpha for r in ok)
        n_ok = len(ok)
        rate = rejections / n_ok if n_ok else float("nan")
        se = math.sqrt(rate * (1 - rate) / n_ok) if n_ok else float("nan")
        rows.append(SimRow(scenario.model, scenario.family, scenario.n, scenario.m,
                           scenario.effect, method, scenario.replicates, rejections,
                           rate, se, failures, seconds, nonconverged))
    if failures:
        logger.warning("%s: %d of %d replicates failed", scenario.label(), failures,
                       scenario.replicates)
    if progress is not None:
        progress(scenario, rows)
    return rows


def run_type1(scenarios, methods=METHODS, progress=None) -> SimTable:
    """Empirical size at each scenario's alpha; every scenario must have effect 0."""
    scenarios = list(scenarios)
    for s in scenarios:
        if s.effect != 0:
            raise DesignError(f"type-I scenario {s.label()} has a nonzero effect")
    table = SimTable(metadata={"kind": "type1", "methods": list(methods)})
    for s in scenarios:
        table.rows.extend(run_scenario(s, methods, progress))
    return table


def run_power(scenarios, methods=METHODS, progress=None) -> SimTable:
    """Rejection rates along increasing effect sizes for one design."""
    scenarios = sorted(scenarios, key=lambda s: s.effect)
    keys = {(s.model, s.family, s.n, s.m) for s in scenarios}
    if len(keys) != 1:
        raise DesignError("power scenarios must share model, family, n and m")
    table = SimTable(metadata={"kind": "power", "methods": list(methods)})
    for s in scenarios:
        table.rows.extend(run_scenario(s, methods, progress))
    return table
