import numpy as np
import pytest

from quasirand.core.exceptions import InputError
from quasirand.core.config import settings
from quasirand.models.models import (
    ONE_STEP_METHODS,
    MethodEstimate,
    MethodKind,
    ObservedData,
    Overlap,
    ReplicateResult,
    ScenarioId,
)
from quasirand.services.simlab import (
    draw_samples,
    generate_population,
    overlap_histogram,
    population_generator,
    replicate_seed,
    run_monte_carlo,
    run_replicate,
    scenario_config,
    scenario_population,
    step_comparison,
    summarize_replicates,
)


class TestSeeds:
    def test_stable(self):
        assert replicate_seed(0, "S1-high", 3) == replicate_seed(0, "S1-high", 3)

    @pytest.mark.parametrize("other", [(1, "S1-high", 3), (0, "S1-low", 3), (0, "S1-high", 4)])
    def test_distinct(self, other):
        assert replicate_seed(0, "S1-high", 3) != replicate_seed(*other)

    def test_fits_in_64_bits(self):
        assert 0 <= replicate_seed(2**64 - 1, "S7-low", 999) < 2**64


class TestPopulation:
    def test_zero_slope_gives_constant_participation(self, rng):
        pop = generate_population(500, -1.0, 0.0, 1.0, rng)
        assert np.all(pop.pi_c_true == pop.pi_c_true[0])

    def test_intercept_sets_mean_participation(self):
        pop = generate_population(50_000, -2.5, 1.0, 1.0, np.random.default_rng(5))
        assert float(np.mean(pop.pi_c_true)) == pytest.approx(0.10, abs=0.01)

    def test_reference_fraction(self, rng):
        pop = generate_population(2000, -2.5, 1.0, 1.0, rng, f_r=0.1)
        assert float(np.sum(pop.pi_r_true)) == pytest.approx(200.0)

    def test_generator_reuses_draws(self, rng):
        build = population_generator(300, 1.0, -1.0, rng)
        low, high = build(-3.0), build(1.0)
        np.testing.assert_array_equal(low.x, high.x)
        np.testing.assert_array_equal(low.y, high.y)
        assert np.all(low.pi_c_true < high.pi_c_true)

    def test_rejects_tiny_population(self, rng):
        with pytest.raises(InputError):
            population_generator(5, 1.0, 1.0, rng)

    def test_scenario_population_is_reproducible(self):
        config = scenario_config("S4", master_seed=9)
        np.testing.assert_array_equal(scenario_population(config).x, scenario_population(config).x)


class TestScenarios:
    def test_unknown_scenario(self):
        with pytest.raises(InputError, match="S8"):
            scenario_config("S8")

    def test_overlap_sets_reference_slope(self):
        assert scenario_config("S1", "high").beta_r == 1.0
        assert scenario_config("S1", "low").beta_r == -1.0
        assert scenario_config("S1", "low").label == "S1-low"

    def test_sample_sizes(self):
        config = scenario_config(ScenarioId.S3)
        pop = scenario_population(config)
        s_c, s_r = draw_samples(pop, config, np.random.default_rng(1))
        assert 450 <= s_c.size <= 750
        assert s_r.size == config.n_r == 600

    def test_low_overlap_separates_samples(self):
        config = scenario_config(ScenarioId.S5, Overlap.LOW)
        pop = scenario_population(config)
        s_c, s_r = draw_samples(pop, config, np.random.default_rng(2))
        assert float(np.mean(pop.x[s_c, 0])) > 0 > float(np.mean(pop.x[s_r, 0]))

    def test_census_reference(self):
        config = scenario_config(ScenarioId.S7)
        pop = scenario_population(config)
        _, s_r = draw_samples(pop, config, np.random.default_rng(3))
        np.testing.assert_array_equal(s_r, np.arange(pop.N))


class TestReplicates:
    def test_replicate_is_deterministic(self):
        config = scenario_config(ScenarioId.S4, reps=2, master_seed=4)
        pop = scenario_population(config)
        assert run_replicate(pop, config, 1).model_dump_json() == run_replicate(pop, config, 1).model_dump_json()

    def test_census_reference_makes_ilr_and_pilr_identical(self):
        config = scenario_config(ScenarioId.S7, reps=3)
        pop = scenario_population(config)
        for rep in range(3):
            result = run_replicate(pop, config, rep)
            estimates = {e.method: e for e in result.estimates}
            ilr, pilr = estimates[MethodKind.ILR], estimates[MethodKind.PILR]
            assert ilr.beta_c1 == pytest.approx(pilr.beta_c1, rel=1e-10)
            assert ilr.mu_hat == pytest.approx(pilr.mu_hat, rel=1e-10)

    def test_worker_count_does_not_change_results(self):
        config = scenario_config(ScenarioId.S4, reps=4, master_seed=12)
        pop = scenario_population(config)
        serial = run_monte_carlo(config, workers=1, population=pop)
        parallel = run_monte_carlo(config, workers=2, population=pop)
        assert serial.model_dump_json() == parallel.model_dump_json()

    def test_single_replicate_has_undefined_spread(self):
        summary = run_monte_carlo(scenario_config(ScenarioId.S4, reps=1))
        assert len(summary.rows) == 2 * len(ONE_STEP_METHODS)
        for row in summary.rows:
            assert np.isnan(row.se)
            assert row.n_used == 1

    def test_summary_matches_replicates(self):
        config = scenario_config(ScenarioId.S4, reps=5, master_seed=8)
        summary = run_monte_carlo(config)
        row = summary.get(MethodKind.CLW, "beta_c1")
        slopes = [next(e.beta_c1 for e in r.estimates if e.method is MethodKind.CLW) for r in summary.replicates]
        assert row.mean == pytest.approx(float(np.mean(slopes)))
        assert row.rmse == pytest.approx(float(np.sqrt(np.mean((np.array(slopes) - 1.0) ** 2))))
        assert [r.rep_index for r in summary.replicates] == list(range(5))

    def test_alp_joins_replicates_when_requested(self):
        config = scenario_config(ScenarioId.S4, reps=2, master_seed=3, include_alp=True)
        summary = run_monte_carlo(config)
        assert len(summary.rows) == 2 * (len(ONE_STEP_METHODS) + 1)
        for parameter in ("beta_c1", "mu"):
            row = summary.get(MethodKind.ALP, parameter)
            assert row.n_used == 2
            assert np.isfinite(row.mean)
            assert np.isnan(row.mean_se_hat)
            assert np.isnan(row.coverage_95)
            assert row.inf_variance == 0
        for rep in summary.replicates:
            assert [e.method for e in rep.estimates] == [*ONE_STEP_METHODS, MethodKind.ALP]


class TestInfiniteVariance:
    @staticmethod
    def _replicate(rep_index: int, se: float, covered: bool) -> ReplicateResult:
        estimates = [
            MethodEstimate(
                method=method,
                beta_c1=1.0 + 0.1 * rep_index,
                se_beta_c1=se,
                mu_hat=2.0,
                se_mu=se,
                beta_covered=covered,
                mu_covered=covered,
                converged=True,
                variance_finite=bool(np.isfinite(se)),
            )
            for method in ONE_STEP_METHODS
        ]
        return ReplicateResult(rep_index=rep_index, n_c=10, n_r=10, estimates=estimates)

    def test_inf_replicates_leave_coverage_and_se_hat(self):
        config = scenario_config(ScenarioId.S4, reps=4)
        replicates = [
            self._replicate(0, 0.3, True),
            self._replicate(1, 0.4, False),
            self._replicate(2, np.inf, False),
            self._replicate(3, np.inf, False),
        ]
        row = summarize_replicates(config, 2.0, replicates).get(MethodKind.CLW, "beta_c1")
        assert row.n_used == 4
        assert row.inf_variance == 2
        assert row.n_flags == 2
        assert row.coverage_95 == pytest.approx(0.5)
        assert row.mean_se_hat == pytest.approx(np.sqrt((0.3**2 + 0.4**2) / 2))

    def test_singular_information_is_flagged_not_covered(self, monkeypatch):
        monkeypatch.setattr(settings, "CONDITION_LIMIT", 0.0)
        summary = run_monte_carlo(scenario_config(ScenarioId.S4, reps=3, master_seed=2))
        for rep in summary.replicates:
            for estimate in rep.estimates:
                assert not estimate.variance_finite
                assert not estimate.beta_covered and not estimate.mu_covered
        for row in summary.rows:
            assert row.inf_variance == row.n_used == 3
            assert np.isinf(row.mean_se_hat)
            assert np.isnan(row.coverage_95)


class TestDiagnostics:
    def test_histogram_counts_match_samples(self):
        config = scenario_config(ScenarioId.S4, Overlap.LOW)
        pop = scenario_population(config)
        s_c, s_r = draw_samples(pop, config, np.random.default_rng(6))
        hist = overlap_histogram(pop, s_c, s_r, bins=12)
        assert hist.edges.size == 13
        assert int(hist.conv_counts.sum()) == s_c.size
        assert int(hist.ref_counts.sum()) == s_r.size

    def test_histogram_needs_two_bins(self):
        config = scenario_config(ScenarioId.S4)
        pop = scenario_population(config)
        with pytest.raises(InputError):
            overlap_histogram(pop, np.arange(3), np.arange(3), bins=1)

    def test_step_comparison(self):
        config = scenario_config(ScenarioId.S4, include_alp=True)
        pop = scenario_population(config)
        comparison = step_comparison(pop, config, n_bins=5)
        assert set(comparison.predicted) == {*ONE_STEP_METHODS, MethodKind.ALP}
        for values in comparison.predicted.values():
            assert values.shape == (pop.N,)
        assert len(comparison.bins) == 5
        means = [b["mean_true"] for b in comparison.bins]
        assert means == sorted(means)
        assert all(0.0 <= b["above_one_CLW"] <= 1.0 for b in comparison.bins)
        assert all(b["above_one_CLW"] == 0.0 for b in comparison.bins)


def test_observed_data_from_population(rng):
    pop = generate_population(200, -1.0, 1.0, 1.0, rng, f_r=0.2)
    s_c, s_r = np.array([0, 5, 9]), np.array([1, 2, 3, 4])
    data = ObservedData.from_population(pop, s_c, s_r)
    np.testing.assert_array_equal(data.conv_pi_r, pop.pi_r_true[s_c])
    np.testing.assert_array_equal(data.ref_w, 1.0 / pop.pi_r_true[s_r])
