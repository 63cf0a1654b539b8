import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcgate import expfam
from vcgate.exceptions import InvalidInputError, InvalidMeanError, SingularWeightError
from vcgate.expfam import Link

LOGIT, LOG, IDENTITY = Link("logit"), Link("log"), Link("identity")


class TestLinkValues:
    @pytest.mark.parametrize("link, mu, expected", [
        (LOGIT, 0.5, 0.0),
        (LOG, 1.0, 0.0),
        (IDENTITY, 3.7, 3.7),
    ])
    def test_link_apply(self, link, mu, expected):
        assert expfam.link_apply(link, mu) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("link, eta, expected", [
        (LOGIT, 0.0, 0.5),
        (LOG, 2.0, math.exp(2.0)),
        (IDENTITY, -1.3, -1.3),
    ])
    def test_link_inverse(self, link, eta, expected):
        assert expfam.link_inverse(link, eta) == pytest.approx(expected, rel=1e-15)

    def test_log_inverse_value(self):
        assert expfam.link_inverse(LOG, 2.0) == pytest.approx(7.389056, abs=1e-6)

    @pytest.mark.parametrize("link, mu, expected", [
        (LOGIT, 0.5, 4.0),
        (LOG, 2.0, 0.5),
        (IDENTITY, -8.0, 1.0),
    ])
    def test_link_derivative(self, link, mu, expected):
        assert expfam.link_derivative(link, mu) == pytest.approx(expected)

    def test_variance_functions(self):
        assert expfam.variance_function(expfam.bernoulli(), 0.5) == 0.25
        assert expfam.variance_function(expfam.binomial(4), 0.5) == 0.0625
        assert expfam.variance_function(expfam.poisson(), 3.0) == 3.0
        assert expfam.variance_function(expfam.normal(2.5), 10.0) == 2.5


class TestDomainErrors:
    def test_logit_outside_domain_names_index(self):
        with pytest.raises(InvalidMeanError, match="index 2"):
            expfam.link_apply(LOGIT, [0.2, 0.5, 1.3])

    def test_log_nonpositive(self):
        with pytest.raises(InvalidMeanError):
            expfam.link_apply(LOG, [1.0, 0.0])

    @pytest.mark.parametrize("link, mu", [(LOGIT, 0.0), (LOGIT, 1.0), (LOG, 0.0)])
    def test_boundary_derivative_is_singular(self, link, mu):
        with pytest.raises(SingularWeightError):
            expfam.link_derivative(link, mu)

    def test_boundary_variance_is_singular(self):
        with pytest.raises(SingularWeightError):
            expfam.variance_function(expfam.bernoulli(), 1.0)

    def test_nonfinite_eta(self):
        with pytest.raises(InvalidInputError):
            expfam.link_inverse(LOGIT, [0.0, np.inf])

    def test_family_invariants(self):
        with pytest.raises(InvalidInputError):
            expfam.Family("binomial")
        with pytest.raises(InvalidInputError):
            expfam.Family("poisson", denominator=3)
        with pytest.raises(InvalidInputError):
            expfam.Family("bernoulli", dispersion=2.0)
        assert expfam.binomial(4).link == LOGIT
        assert expfam.poisson().link == LOG
        assert expfam.normal().link == IDENTITY


class TestProperties:
    @pytest.mark.parametrize("link, sampler", [
        (LOGIT, lambda r: r.uniform(1e-6, 1 - 1e-6, 1000)),
        (LOG, lambda r: np.exp(r.uniform(-10, 10, 1000))),
        (IDENTITY, lambda r: r.normal(0, 100, 1000)),
    ])
    def test_round_trip(self, link, sampler):
        mu = sampler(np.random.default_rng(0))
        back = expfam.link_inverse(link, expfam.link_apply(link, mu))
        assert np.max(np.abs(back - mu)) < 1e-10

    @pytest.mark.parametrize("link, grid", [
        (LOGIT, np.linspace(0.02, 0.98, 49)),
        (LOG, np.linspace(0.1, 20, 50)),
        (IDENTITY, np.linspace(-5, 5, 11)),
    ])
    def test_derivative_matches_finite_difference(self, link, grid):
        h = 1e-6 * np.maximum(1.0, np.abs(grid))
        fd = (expfam.link_apply(link, grid + h) - expfam.link_apply(link, grid - h)) / (2 * h)
        np.testing.assert_allclose(expfam.link_derivative(link, grid), fd, rtol=1e-6)

    @given(st.floats(min_value=1e-9, max_value=1 - 1e-9))
    def test_binary_variance_positive(self, mu):
        for fam in (expfam.bernoulli(), expfam.binomial(4)):
            assert expfam.variance_function(fam, mu) > 0

    @given(st.floats(min_value=1e-12, max_value=1e12))
    def test_poisson_variance_positive(self, mu):
        assert expfam.variance_function(expfam.poisson(), mu) > 0

    @settings(max_examples=50)
    @given(st.floats(min_value=-30, max_value=30), st.floats(min_value=1e-4, max_value=1.0))
    def test_logit_monotone(self, eta, step):
        lo = expfam.link_inverse(LOGIT, eta)
        hi = expfam.link_inverse(LOGIT, eta + step)
        assert hi >= lo


def test_clamp_counts_moved_entries():
    eta, moved = expfam.clamp_eta(LOGIT, [-20.0, 0.0, 16.0])
    assert moved == 2
    np.testing.assert_array_equal(eta, [-15.0, 0.0, 15.0])
    _, moved = expfam.clamp_eta(IDENTITY, [1e9])
    assert moved == 0


def test_response_validation():
    with pytest.raises(InvalidInputError):
        expfam.validate_response(expfam.bernoulli(), [0, 1, 0.5])
    with pytest.raises(InvalidInputError):
        expfam.validate_response(expfam.poisson(), [0, 1.5])
    with pytest.raises(InvalidInputError):
        expfam.validate_response(expfam.binomial(4), [0.3])
    expfam.validate_response(expfam.binomial(4), [0.0, 0.25, 1.0])
