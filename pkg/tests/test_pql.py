from dataclasses import replace

import numpy as np
import pytest

from oracles import indicator
from vcgate import expfam
from vcgate.exceptions import DegenerateResponseError, DesignError
from vcgate.expfam import Link
from vcgate.lmm import LmmDesign, RandomTerm, fit_reml
from vcgate.pql import (
    GlmmSpec,
    WorkingLmm,
    build_working_lmm,
    compute_weights,
    fit_pql,
    working_response,
)
from vcgate.simharness import SimScenario, generate_dataset
from vcgate.vctest import arlrt_statistic


def intercept_design(n_groups, per_group, rng):
    N = n_groups * per_group
    X = np.column_stack([np.ones(N), rng.uniform(size=N)])
    Z = indicator(np.repeat(np.arange(n_groups), per_group))
    return LmmDesign(X, (RandomTerm(Z),)), Z


class TestWeightsAndWorkingResponse:
    def test_normal_weights_are_one(self):
        eta = np.linspace(-3, 3, 7)
        np.testing.assert_array_equal(compute_weights(eta, expfam.normal()), np.ones(7))

    def test_bernoulli_weight_at_zero(self):
        assert compute_weights([0.0], expfam.bernoulli())[0] == pytest.approx(0.25)

    def test_poisson_weight_at_zero(self):
        assert compute_weights([0.0], expfam.poisson())[0] == pytest.approx(1.0)

    def test_normal_working_response_is_y(self):
        rng = np.random.default_rng(0)
        y, eta = rng.normal(size=9), rng.normal(size=9)
        np.testing.assert_allclose(working_response(y, eta, expfam.normal()), y, atol=1e-14)

    def test_bernoulli_working_response(self):
        assert working_response([1.0], [0.0], expfam.bernoulli())[0] == pytest.approx(1.0)

    def test_poisson_working_response(self):
        assert working_response([3.0], [0.0], expfam.poisson())[0] == pytest.approx(2.0)

    def test_weights_positive_under_clamping(self):
        eta = np.array([-1e3, -40.0, 0.0, 40.0, 1e3])
        assert compute_weights(eta, expfam.bernoulli()).min() > 0
        assert compute_weights(eta, expfam.poisson()).min() > 0


class TestSpec:
    def test_non_canonical_link_rejected(self):
        rng = np.random.default_rng(0)
        design, _ = intercept_design(3, 4, rng)
        with pytest.raises(DesignError):
            GlmmSpec(expfam.poisson(), design, Link("identity"))

    def test_constant_response_rejected(self):
        rng = np.random.default_rng(1)
        design, _ = intercept_design(4, 5, rng)
        with pytest.raises(DegenerateResponseError):
            fit_pql(GlmmSpec(expfam.bernoulli(), design), np.zeros(20))


class TestNormalReduction:
    def test_pql_equals_direct_reml(self):
        rng = np.random.default_rng(2)
        design, Z = intercept_design(10, 6, rng)
        y = 3 * design.X[:, 1] + Z @ rng.normal(0, 2, 10) + rng.normal(0, 1.5, 60)
        direct = fit_reml(design, y)
        pql = fit_pql(GlmmSpec(expfam.normal(), design), y)
        assert pql.converged
        assert pql.iterations <= 3
        np.testing.assert_allclose(pql.beta, direct.beta, atol=1e-6)
        np.testing.assert_allclose(pql.ratios, direct.ratios, atol=1e-6)
        np.testing.assert_allclose(pql.sigma2, direct.sigma2, rtol=1e-6)
        assert pql.sigma2_e == pytest.approx(direct.sigma2_e, rel=1e-6)

    def test_working_lmm_is_original_at_unit_dispersion(self):
        rng = np.random.default_rng(3)
        design, _ = intercept_design(5, 4, rng)
        y = rng.normal(size=20)
        fam = expfam.normal()
        spec = GlmmSpec(fam, design)
        fit = fit_pql(spec, y)
        # rebuild at phi = 1 to check the pure algebraic identity
        unit = replace(fit, family=fam, w_star=np.ones(20), mu_star=fit.eta_star)
        wlmm = build_working_lmm(unit, spec, y)
        np.testing.assert_allclose(wlmm.y_tilde, y, atol=1e-12)
        np.testing.assert_allclose(wlmm.design_tilde.X, design.X)
        np.testing.assert_allclose(wlmm.design_tilde.randoms[0].Z, design.randoms[0].Z)

    def test_statistic_unchanged_versus_direct_lmm(self):
        rng = np.random.default_rng(4)
        design, Z = intercept_design(12, 5, rng)
        y = design.X @ [1.0, 2.0] + Z @ rng.normal(0, 0.6, 12) + rng.normal(size=60)
        spec = GlmmSpec(expfam.normal(), design)
        fit = fit_pql(spec, y)
        stat_pql, _, _ = arlrt_statistic(build_working_lmm(fit, spec, y), 0)
        direct_alt = fit_reml(design, y)
        direct_null = fit_reml(design, y, active=[])
        stat_direct = max(0.0, 2 * (direct_alt.rel - direct_null.rel))
        assert stat_pql == pytest.approx(stat_direct, abs=1e-6)


@pytest.fixture(scope="module")
def bernoulli_fit():
    rng = np.random.default_rng(5)
    design, Z = intercept_design(15, 8, rng)
    eta = -0.3 + design.X[:, 1] + Z @ rng.normal(0, 1.0, 15)
    y = (rng.random(120) < 1 / (1 + np.exp(-eta))).astype(float)
    spec = GlmmSpec(expfam.bernoulli(), design)
    return spec, y, fit_pql(spec, y)


class TestGeneralizedFits:
    def test_fit_invariants(self, bernoulli_fit):
        spec, y, fit = bernoulli_fit
        assert fit.converged
        assert fit.w_star.min() > 0
        np.testing.assert_allclose(fit.mu_star, expfam.link_inverse(spec.link, fit.eta_star),
                                   rtol=1e-15)

    def test_idempotent_at_convergence(self, bernoulli_fit):
        spec, y, fit = bernoulli_fit
        again = fit_reml(spec.design.row_scaled(np.sqrt(fit.w_star)),
                         build_working_lmm(fit, spec, y).y_tilde)
        tol = 10 * 1e-6
        scale = np.abs(fit.beta) + 1e-4
        assert np.max(np.abs(again.beta - fit.beta) / scale) < tol
        rel_var = np.abs(again.sigma2 - fit.sigma2) / (np.abs(fit.sigma2) + 1e-4)
        assert np.max(rel_var) < tol

    def test_working_response_is_affine_in_y(self, bernoulli_fit):
        spec, y, fit = bernoulli_fit
        base = build_working_lmm(fit, spec, y).y_tilde
        slope = np.sqrt(fit.w_star) * expfam.link_derivative(spec.link, fit.mu_star)
        for i in (0, 17, 63):
            bumped = y.copy()
            bumped[i] += 0.5
            diff = build_working_lmm(fit, spec, bumped).y_tilde - base
            expected = np.zeros_like(diff)
            expected[i] = 0.5 * slope[i]
            np.testing.assert_allclose(diff, expected, atol=1e-12)

    def test_non_convergence_is_reported(self, bernoulli_fit):
        spec, y, _ = bernoulli_fit
        fit = fit_pql(spec, y, max_iter=1)
        assert not fit.converged
        assert any("converge" in w for w in fit.warnings)


def test_bernoulli_toy_working_response_matches_elementwise_script():
    rng = np.random.default_rng(6)
    design, _ = intercept_design(3, 4, rng)
    y = np.array([0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 0, 1], float)
    spec = GlmmSpec(expfam.bernoulli(), design)
    fit = fit_pql(spec, y)
    wlmm = build_working_lmm(fit, spec, y)
    expected = []
    for yi, eta, mu, w in zip(y, fit.eta_star, fit.mu_star, fit.w_star):
        gprime = 1.0 / (mu * (1.0 - mu))
        expected.append(w ** 0.5 * (eta + gprime * (yi - mu)))
    np.testing.assert_allclose(wlmm.y_tilde, expected, rtol=0, atol=1e-12)


def test_equal_weights_leave_statistic_unchanged():
    rng = np.random.default_rng(7)
    design, Z = intercept_design(10, 6, rng)
    y = design.X @ [0.0, 1.0] + Z @ rng.normal(0, 0.7, 10) + rng.normal(size=60)
    base, _, _ = arlrt_statistic(WorkingLmm(y, design), 0)
    c = 3.7
    scaled = WorkingLmm(np.sqrt(c) * y, design.row_scaled(np.full(60, np.sqrt(c))))
    stat, _, _ = arlrt_statistic(scaled, 0)
    assert stat == pytest.approx(base, abs=1e-6)


def test_bernoulli_null_fits_mostly_on_boundary():
    # measured: 55 of 100 replicates land exactly at zero for this scenario
    scenario = SimScenario("M1", "bernoulli", n=10, m=20, effect=0.0, seed=11)
    on_boundary = 0
    for i in range(100):
        y, spec = generate_dataset(scenario, i)
        fit = fit_pql(spec, y)
        on_boundary += fit.ratios[0] < 1e-6
    assert on_boundary >= 50
