import numpy as np
import pytest
import statsmodels.api as sm
from scipy.special import expit, logit
from statsmodels.tools.sm_exceptions import PerfectSeparationError

from quasirand.core.exceptions import InputError, MethodRequirementError, NumericError
from quasirand.models.models import (
    ONE_STEP_METHODS,
    MethodKind,
    ObservedData,
    PropensityFit,
    PropensityParams,
    SolverConfig,
)
from quasirand.services.propensity import (
    alp_two_step,
    crisp,
    crisp_union_keep_convenience,
    crisp_union_keep_reference,
    crisp_with_coverage,
    delta_link,
    fisher_info,
    fit,
    fit_method,
    link_eval,
    loglik,
    observed_info,
    predict_pi_c,
    score,
)
from tests.conftest import random_observed


def _intercept_only(conv_pi_r: float, ref_pi_r: float) -> ObservedData:
    return ObservedData(
        conv_x=np.zeros((1, 0)),
        conv_y=[1.0],
        conv_pi_r=[conv_pi_r],
        ref_x=np.zeros((1, 0)),
        ref_pi_r=[ref_pi_r],
    )


class TestLinks:
    @pytest.mark.parametrize(("pi_c", "pi_r", "expected"), [(0.2, 0.2, 0.5), (0.1, 0.3, 0.25)])
    def test_crisp(self, pi_c, pi_r, expected):
        assert crisp(pi_c, pi_r) == pytest.approx(expected)

    def test_crisp_against_one_is_delta_link(self):
        pi_c = np.linspace(0.01, 0.99, 25)
        np.testing.assert_allclose(crisp(pi_c, 1.0), delta_link(pi_c))

    def test_coverage_reduces_to_crisp(self):
        assert crisp_with_coverage(0.3, 1.0, 0.6, 1.0) == pytest.approx(crisp(0.3, 0.6))
        assert crisp_with_coverage(0.2, 0.5, 0.2, 0.5) == pytest.approx(0.5)
        assert crisp_with_coverage(0.1, 0.5, 0.3, 1.0) == pytest.approx(1.0 / 7.0)

    def test_union_keep_reference(self):
        assert crisp_union_keep_reference(0.5, 0.5) == pytest.approx(2.0 / 3.0)
        assert crisp_union_keep_reference(0.1, 0.3) == pytest.approx(0.1 / 0.37)
        assert crisp_union_keep_reference(0.3, 1e-12) == pytest.approx(1.0)

    def test_union_keep_convenience(self):
        assert crisp_union_keep_convenience(0.5, 0.5) == pytest.approx(1.0 / 3.0)
        assert crisp_union_keep_convenience(0.3, 1e-12) == pytest.approx(1.0)

    def test_union_partition(self):
        pi_c, pi_r = np.meshgrid(np.linspace(0.05, 0.95, 10), np.linspace(0.05, 0.95, 10))
        kept = crisp_union_keep_convenience(pi_c, pi_r)
        np.testing.assert_allclose(kept + pi_r / (pi_c + pi_r - pi_c * pi_r), 1.0)

    def test_scalar_in_scalar_out(self):
        assert isinstance(crisp(0.2, 0.4), float)
        assert isinstance(crisp(np.array([0.2]), 0.4), np.ndarray)

    @pytest.mark.parametrize(("pi_c", "pi_r"), [(0.0, 0.5), (1.0, 0.5), (0.5, 0.0), (0.5, 1.5)])
    def test_crisp_rejects_out_of_range(self, pi_c, pi_r):
        with pytest.raises(InputError):
            crisp(pi_c, pi_r)

    def test_link_eval_clamps(self):
        link = link_eval(np.array([-1000.0, 0.0, 1000.0]), 1.0)
        assert np.all(link.pi_c > 0)
        assert np.all(link.pi_c < 1)
        assert link.pi_c[1] == pytest.approx(0.5)
        assert link.pi_z_or_delta[1] == pytest.approx(1.0 / 3.0)


class TestLikelihoods:
    def test_ilr_loglik_balanced_pair(self):
        data = _intercept_only(0.5, 0.5)
        assert loglik(MethodKind.ILR, data, np.zeros(1)) == pytest.approx(2.0 * np.log(0.5))

    def test_ilr_requires_conv_pi_r(self):
        data = ObservedData(conv_x=[[0.0]], conv_y=[1.0], ref_x=[[0.0]], ref_pi_r=[0.5])
        with pytest.raises(MethodRequirementError, match="conv_pi_r"):
            loglik(MethodKind.ILR, data, np.zeros(2))

    def test_pilr_with_unit_weights_is_ilr_with_unit_probabilities(self, rng):
        base = random_observed(rng, p=2)
        data = ObservedData(
            conv_x=base.conv_x,
            conv_y=base.conv_y,
            conv_pi_r=np.ones(base.n_c),
            ref_x=base.ref_x,
            ref_pi_r=np.ones(base.n_r),
        )
        beta = rng.normal(size=3)
        assert loglik(MethodKind.PILR, data, beta) == pytest.approx(loglik(MethodKind.ILR, data, beta), rel=1e-12)
        np.testing.assert_allclose(score(MethodKind.PILR, data, beta), score(MethodKind.ILR, data, beta), rtol=1e-12)

    def test_ilr_score_vanishes_on_balanced_pair(self):
        beta = np.array([0.2, 0.5])
        pi_c = float(expit(0.2 + 0.5 * 0.3))
        data = ObservedData(conv_x=[[0.3]], conv_y=[0.0], conv_pi_r=[pi_c], ref_x=[[0.3]], ref_pi_r=[pi_c])
        assert score(MethodKind.ILR, data, beta)[0] == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_score_matches_finite_differences(self, method, rng):
        h = 1e-6
        for _ in range(100):
            data = random_observed(rng, p=2)
            beta = rng.normal(scale=0.5, size=3)
            numeric = np.array(
                [
                    (loglik(method, data, beta + h * e) - loglik(method, data, beta - h * e)) / (2 * h)
                    for e in np.eye(3)
                ],
            )
            analytic = score(method, data, beta)
            rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
            assert np.max(rel) < 1e-4

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_observed_info_matches_second_differences(self, method, rng):
        h = 1e-5
        for _ in range(20):
            data = random_observed(rng, p=2)
            beta = rng.normal(scale=0.5, size=3)
            numeric = -np.column_stack(
                [(score(method, data, beta + h * e) - score(method, data, beta - h * e)) / (2 * h) for e in np.eye(3)],
            )
            analytic = observed_info(method, data, beta)
            scale = max(1.0, float(np.max(np.abs(analytic))))
            assert np.max(np.abs(analytic - numeric)) / scale < 1e-3

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    @pytest.mark.parametrize("plug_in", [False, True], ids=["sample", "plug-in"])
    def test_fisher_info_symmetric(self, method, plug_in, small_data, rng):
        info = fisher_info(method, small_data, rng.normal(size=2), plug_in=plug_in)
        assert np.max(np.abs(info - info.T)) < 1e-10

    @pytest.mark.parametrize("plug_in", [False, True], ids=["sample", "plug-in"])
    def test_ilr_information_pinned_value(self, plug_in):
        # pi_c = pi_r = 0.5 at beta = 0: each stacked row adds 0.25 * 0.25, the plug-in H
        # (pi_c + pi_r) pi_z (1 - pi_z) (1 - pi_c)^2 / pi_c gives the same total
        info = fisher_info(MethodKind.ILR, _intercept_only(0.5, 0.5), np.zeros(1), plug_in=plug_in)
        assert info[0, 0] == pytest.approx(0.125)


def _grid_argmax(method: MethodKind, data: ObservedData) -> np.ndarray:
    center = np.zeros(2)
    for half, step in ((3.0, 0.1), (0.3, 0.01), (0.03, 0.001)):
        axis = np.arange(-half, half + step / 2, step)
        best, best_value = center, -np.inf
        for b0 in center[0] + axis:
            for b1 in center[1] + axis:
                value = loglik(method, data, np.array([b0, b1]))
                if value > best_value:
                    best, best_value = np.array([b0, b1]), value
        center = best
    return center


class TestFit:
    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_matches_grid_search(self, method, seed7_data):
        fitted = fit(method, seed7_data)
        assert fitted.converged
        np.testing.assert_allclose(fitted.beta, _grid_argmax(method, seed7_data), atol=0.002)

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_loglik_path_is_monotone(self, method, seed7_data):
        fitted = fit(method, seed7_data)
        assert np.all(np.diff(fitted.loglik_path) >= 0)
        assert fitted.loglik == pytest.approx(fitted.loglik_path[-1])

    def test_clw_is_local_maximum(self, seed42_data):
        rng = np.random.default_rng(42)
        fitted = fit(MethodKind.CLW, seed42_data)
        best = loglik(MethodKind.CLW, seed42_data, fitted.beta)
        for _ in range(100):
            delta = rng.normal(size=2)
            delta *= 0.1 / np.linalg.norm(delta)
            assert best > loglik(MethodKind.CLW, seed42_data, fitted.beta + delta)

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_separation_is_flagged(self, method):
        data = ObservedData(
            conv_x=[[1.0], [2.0], [3.0]],
            conv_y=[0.0, 0.0, 0.0],
            conv_pi_r=[0.5, 0.5, 0.5],
            ref_x=[[-1.0], [-2.0], [-3.0]],
            ref_pi_r=[0.5, 0.5, 0.5],
        )
        fitted = fit(method, data)
        assert not fitted.converged
        assert fitted.separated
        assert len(fitted.beta_norm_path) > 1

    def test_permutation_invariance(self, seed7_data):
        rng = np.random.default_rng(1)
        conv_order = rng.permutation(seed7_data.n_c)
        ref_order = rng.permutation(seed7_data.n_r)
        shuffled = ObservedData(
            conv_x=seed7_data.conv_x[conv_order],
            conv_y=seed7_data.conv_y[conv_order],
            conv_pi_r=seed7_data.conv_pi_r[conv_order],
            ref_x=seed7_data.ref_x[ref_order],
            ref_pi_r=seed7_data.ref_pi_r[ref_order],
        )
        for method in ONE_STEP_METHODS:
            original = fit(method, seed7_data)
            reordered = fit(method, shuffled)
            assert original.converged and reordered.converged
            assert reordered.iterations == original.iterations
            np.testing.assert_allclose(reordered.beta, original.beta, rtol=0, atol=1e-10)

    @pytest.mark.parametrize("method", ONE_STEP_METHODS, ids=lambda m: m.value)
    def test_convergence_on_last_allowed_iteration(self, method, seed7_data):
        iterations = fit(method, seed7_data).iterations
        assert iterations > 1
        exact = fit(method, seed7_data, SolverConfig(max_iter=iterations))
        assert exact.converged
        assert exact.iterations == iterations
        short = fit(method, seed7_data, SolverConfig(max_iter=iterations - 1))
        assert not short.converged

    def test_ridge_shrinks_slope_only(self, seed7_data):
        plain = fit(MethodKind.PILR, seed7_data)
        ridged = fit(MethodKind.PILR, seed7_data, SolverConfig(ridge=50.0))
        assert abs(ridged.beta[1]) < abs(plain.beta[1])

    def test_fit_refuses_alp(self, small_data):
        with pytest.raises(InputError):
            fit(MethodKind.ALP, small_data)

    def test_predict_matches_fitted_convenience_probabilities(self, seed7_data):
        fitted = fit(MethodKind.ILR, seed7_data)
        np.testing.assert_allclose(predict_pi_c(fitted, seed7_data.conv_x), fitted.pi_c_hat_conv)


class TestAlp:
    @staticmethod
    def _alp_fit(pi_delta: float) -> PropensityFit:
        return PropensityFit(
            method=MethodKind.ALP,
            beta_hat=PropensityParams(beta=[float(logit(pi_delta))]),
            pi_c_hat_conv=[1.0],
            converged=True,
            iterations=0,
            score_norm=0.0,
            loglik=0.0,
            info_matrix=[[1.0]],
        )

    @pytest.mark.parametrize(("pi_delta", "expected"), [(0.5, 1.0), (0.25, 1.0 / 3.0)])
    def test_inversion(self, pi_delta, expected):
        assert predict_pi_c(self._alp_fit(pi_delta), np.zeros((1, 0)))[0] == pytest.approx(expected)

    def test_counts_probabilities_above_one(self):
        data = ObservedData(
            conv_x=[[2.0]] * 30 + [[-1.0]] * 5,
            conv_y=[1.0] * 35,
            ref_x=[[2.0]] * 5 + [[-1.0]] * 20,
            ref_pi_r=[1.0] * 25,
        )
        fitted = alp_two_step(data)
        assert fitted.method is MethodKind.ALP
        assert fitted.n_pi_c_above_one == 30
        # saturated first step: pi_delta = 30 / 35 at x = 2
        assert fitted.pi_c_hat_conv[0] == pytest.approx(6.0, rel=1e-4)

    def test_fit_method_dispatch(self, small_data):
        assert fit_method(MethodKind.ALP, small_data).method is MethodKind.ALP
        assert fit_method(MethodKind.CLW, small_data).method is MethodKind.CLW

    def test_separated_first_step_raises(self, monkeypatch, small_data):
        def separated_fit(self, *args, **kwargs):
            raise PerfectSeparationError("Perfect separation detected, results not available")

        monkeypatch.setattr(sm.GLM, "fit", separated_fit)
        with pytest.raises(NumericError, match="separated"):
            alp_two_step(small_data)
