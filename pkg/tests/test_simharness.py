import csv
import json
import math
from dataclasses import asdict

import numpy as np
import pytest

from vcgate import simharness
from vcgate.exceptions import DesignError, InvalidMeanError
from vcgate.lmm import fit_reml
from vcgate.simharness import (
    CSV_FIELDS,
    SimScenario,
    generate_dataset,
    linear_predictor,
    run_power,
    run_scenario,
    run_type1,
)
from vcgate.vctest import ARLRT, AS_ARLRT


def strip_time(rows):
    return [{k: v for k, v in asdict(r).items() if k != "seconds"} for r in rows]


class TestGenerators:
    def test_m1_normal_slope_is_unbiased(self):
        sc = SimScenario("M1", "normal", n=10, m=10, seed=4)
        slopes = [fit_reml(spec.design, y).beta[1]
                  for y, spec in (generate_dataset(sc, i) for i in range(200))]
        assert abs(np.mean(slopes) - 1.0) < 0.05

    def test_m3_null_predictor_is_linear(self):
        sc = SimScenario("M3", "poisson", n=5, m=10)
        eta, spec = linear_predictor(sc, 0)
        t = spec.design.X[:, 1]
        np.testing.assert_allclose(eta, 0.5 - t, atol=1e-15)
        assert t.min() >= 0 and t.max() <= 2

    def test_m2_null_has_only_intercept_heterogeneity(self):
        sc = SimScenario("M2", "normal", n=8, m=6, effect=0.0, nuisance=1.0)
        eta, spec = linear_predictor(sc, 3)
        x = spec.design.X[:, 1]
        offsets = (eta - x).reshape(8, 6)
        np.testing.assert_allclose(offsets - offsets[:, :1], 0, atol=1e-14)
        assert np.ptp(offsets[:, 0]) > 0

    def test_m4_shapes(self):
        sc = SimScenario("M4", "binomial", n=6, m=10, effect=2.0, K=12)
        y, spec = generate_dataset(sc, 0)
        assert [r.q for r in spec.design.randoms] == [6, 10]
        assert sc.tested_index == 1
        np.testing.assert_allclose(y * 4, np.round(y * 4))

    def test_same_replicate_same_data(self):
        sc = SimScenario("M1", "bernoulli", n=5, m=6, effect=0.5, seed=9)
        a, _ = generate_dataset(sc, 2)
        b, _ = generate_dataset(sc, 2)
        c, _ = generate_dataset(sc, 3)
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()
        assert set(np.unique(a)) <= {0.0, 1.0}

    def test_eta_matches_generated_response_stream(self):
        sc = SimScenario("M1", "poisson", n=4, m=5, effect=1.0, seed=2)
        eta, _ = linear_predictor(sc, 1)
        y, _ = generate_dataset(sc, 1)
        rng = np.random.default_rng([2, 1])
        rng.uniform(size=20)
        rng.normal(size=4)
        np.testing.assert_array_equal(y, rng.poisson(np.exp(eta)))

    def test_scenario_validation(self):
        with pytest.raises(DesignError):
            SimScenario("M5", "normal", 5, 5)
        with pytest.raises(DesignError):
            SimScenario("M1", "normal", 5, 5, effect=-1.0)


class TestDrivers:
    def test_rows_are_reproducible(self):
        sc = SimScenario("M1", "normal", n=5, m=4, replicates=8, B=300, seed=1)
        assert strip_time(run_scenario(sc)) == strip_time(run_scenario(sc))

    def test_process_pool_matches_serial(self, monkeypatch):
        sc = SimScenario("M1", "poisson", n=5, m=4, replicates=6, B=300, seed=2)
        serial = strip_time(run_scenario(sc))
        monkeypatch.setenv("VCGATE_THREADS", "2")
        assert strip_time(run_scenario(sc)) == serial

    def test_rate_and_se(self):
        sc = SimScenario("M1", "normal", n=5, m=4, replicates=10, B=300, seed=5)
        for row in run_scenario(sc):
            assert 0 <= row.rate <= 1
            assert row.rate == row.rejections / row.replicates
            assert row.se == pytest.approx(math.sqrt(row.rate * (1 - row.rate) / 10))

    def test_failures_are_counted(self, monkeypatch):
        real = simharness.replicate_pvalues

        def flaky(scenario, i, methods):
            if i % 3 == 0:
                raise InvalidMeanError("boom")
            return real(scenario, i, methods)
        monkeypatch.setattr(simharness, "replicate_pvalues", flaky)
        sc = SimScenario("M1", "normal", n=5, m=4, replicates=9, B=200, seed=3)
        rows = run_scenario(sc)
        for row in rows:
            assert row.failures == 3
            assert row.replicates == 9
            ok = row.replicates - row.failures
            assert row.rate == row.rejections / ok

    def test_type1_requires_null(self):
        with pytest.raises(DesignError):
            run_type1([SimScenario("M1", "normal", 5, 4, effect=0.1)])

    def test_power_requires_shared_design(self):
        with pytest.raises(DesignError):
            run_power([SimScenario("M1", "normal", 5, 4), SimScenario("M1", "normal", 6, 4)])

    def test_power_curve_is_ordered_and_increasing(self):
        effects = [1.5, 0.0, 0.3]
        scen = [SimScenario("M1", "normal", n=10, m=5, effect=e, replicates=60, B=500, seed=8)
                for e in effects]
        table = run_power(scen, methods=(AS_ARLRT,))
        rows = table.rows
        assert [r.effect for r in rows] == [0.0, 0.3, 1.5]
        for lo, hi in zip(rows, rows[1:]):
            assert hi.rate >= lo.rate - 2 * max(lo.se, hi.se, 0.02)
        assert rows[0].rate < 0.2
        assert rows[-1].rate > 0.8

    def test_table_outputs(self, tmp_path):
        sc = SimScenario("M1", "normal", n=5, m=4, replicates=4, B=200)
        table = run_type1([sc])
        table.to_csv(tmp_path / "t.csv")
        table.to_json(tmp_path / "t.json")
        with open(tmp_path / "t.csv") as fh:
            reader = csv.DictReader(fh)
            assert tuple(reader.fieldnames) == CSV_FIELDS
            rows = list(reader)
        assert [r["method"] for r in rows] == [ARLRT, AS_ARLRT]
        payload = json.loads((tmp_path / "t.json").read_text())
        assert payload["rows"][0]["rate"] == float(rows[0]["rate"])
        assert table.rate(ARLRT, model="M1") == table.rows[0].rate


@pytest.mark.slow
def test_bernoulli_smooth_power_stays_below_one():
    # measured 0.93 with 60 replicates; separation in the high-probability
    # region keeps some replicates from rejecting even at large deviations
    sc = SimScenario("M3", "bernoulli", n=100, m=5, effect=16.0, replicates=60, seed=3)
    rows = run_scenario(sc, methods=(ARLRT,))
    assert rows[0].failures == 0
    assert rows[0].rate < 1.0
    assert rows[0].rate > 0.8
