"""Service layer wiring the numerical modules to the file repositories."""

import logging
from collections.abc import Callable, Sequence

import numpy as np

from quasirand.core.config import settings
from quasirand.core.exceptions import MethodRequirementError, VerificationError
from quasirand.models.models import (
    ONE_STEP_METHODS,
    GridPoint,
    MCSummary,
    MethodKind,
    ObservedData,
    Overlap,
    PlugInConvention,
    ScenarioId,
    SolverConfig,
)
from quasirand.repositories.repositories import ObservedDataRepository, ResultRepository
from quasirand.schemas.schemas import (
    CheckResult,
    EstimateResponse,
    GridSpec,
    MethodDiagnostics,
    MethodResult,
)
from quasirand.services import simlab
from quasirand.services.inference import infer
from quasirand.services.propensity import fit_method, loglik, score
from quasirand.services.theory import cov_Iz_bruteforce, cov_Iz_exact, se_ratio_grid

logger = logging.getLogger(__name__)


def _finite_or_none(value: float) -> float | None:
    return float(value) if np.isfinite(value) else None


class EstimationService:
    """Service for one-shot estimation on user files."""

    def __init__(
        self,
        data_repo: ObservedDataRepository,
        result_repo: ResultRepository | None = None,
        solver: SolverConfig | None = None,
    ) -> None:
        """Initialize service with repositories."""
        self.data_repo = data_repo
        self.result_repo = result_repo
        self.solver = solver or SolverConfig.from_settings()

    def estimate(
        self,
        methods: Sequence[MethodKind] | None = None,
        *,
        convention: PlugInConvention = PlugInConvention.CONVENIENCE,
    ) -> EstimateResponse:
        """Fit every requested method and assemble the versioned JSON document.

        Without an explicit method list all one-step methods are fitted, ILR only when the
        convenience file carries reference-design probabilities.
        """
        data, covariates = self.data_repo.load()
        if methods is None:
            methods = [m for m in ONE_STEP_METHODS if m is not MethodKind.ILR or data.conv_pi_r is not None]
            if data.conv_pi_r is None:
                logger.info("No pi_r column in the convenience file, skipping ILR")
        if MethodKind.ILR in methods and data.conv_pi_r is None:
            raise MethodRequirementError(
                "ILR requires conv_pi_r: add a pi_r column to the convenience file",
            )

        results = [self._estimate_one(method, data, convention) for method in methods]
        response = EstimateResponse(n_c=data.n_c, n_r=data.n_r, covariates=covariates, results=results)
        if self.result_repo is not None:
            self.result_repo.write_estimate(response)
        return response

    def _estimate_one(self, method: MethodKind, data: ObservedData, convention: PlugInConvention) -> MethodResult:
        fitted = fit_method(method, data, self.solver)
        if not fitted.converged:
            logger.warning(f"{method.value}: solver did not converge after {fitted.iterations} iterations")
        result = infer(method, data, fitted, convention=convention)
        logger.info(f"{method.value}: mu_hat={result.mu_hat:.6g} se={result.se_mu:.4g}")
        return MethodResult(
            method=method,
            mu_hat=result.mu_hat,
            se=_finite_or_none(result.se_mu),
            ci=(_finite_or_none(result.ci[0]), _finite_or_none(result.ci[1])),
            beta_hat=[float(b) for b in fitted.beta],
            se_beta=[_finite_or_none(s) for s in result.se_beta],
            diagnostics=MethodDiagnostics(
                converged=fitted.converged,
                separated=fitted.separated,
                iterations=fitted.iterations,
                score_norm=fitted.score_norm,
                loglik=fitted.loglik,
                n_pi_c_above_one=fitted.n_pi_c_above_one,
                variance_finite=result.variance_finite,
                var_mu_clamped=result.var_mu_clamped,
                design_variance_estimable=result.design_variance_estimable,
                n_hat=result.n_hat,
            ),
        )


class SimulationService:
    """Service running Monte Carlo scenarios and writing their CSV files."""

    def __init__(self, result_repo: ResultRepository, solver: SolverConfig | None = None) -> None:
        """Initialize service with the output repository."""
        self.result_repo = result_repo
        self.solver = solver or SolverConfig.from_settings()

    def run(
        self,
        scenario: ScenarioId,
        overlaps: Sequence[Overlap],
        *,
        reps: int,
        seed: int,
        workers: int = 1,
        include_alp: bool = False,
        hist_bins: int = 30,
    ) -> list[MCSummary]:
        """Run ``scenario`` for every overlap setting."""
        summaries: list[MCSummary] = []
        histograms: dict[Overlap, simlab.OverlapHistogram] = {}
        comparisons: dict[str, simlab.StepComparison] = {}
        for overlap in overlaps:
            config = simlab.scenario_config(
                scenario,
                overlap,
                reps=reps,
                master_seed=seed,
                include_alp=include_alp,
            )
            pop = simlab.scenario_population(config)
            summary = simlab.run_monte_carlo(config, workers=workers, solver=self.solver, population=pop)
            summaries.append(summary)
            for row in summary.rows:
                logger.info(
                    f"{config.label} {row.method.value} {row.parameter}: mean={row.mean:.4f} "
                    f"rmse={row.rmse:.4f} coverage={row.coverage_95:.3f} flags={row.n_flags}",
                )

            rng = np.random.default_rng(simlab.replicate_seed(seed, f"{config.label}:histogram", 0))
            s_c, s_r = simlab.draw_samples(pop, config, rng)
            histograms[config.overlap] = simlab.overlap_histogram(pop, s_c, s_r, bins=hist_bins)
            if include_alp:
                comparisons[config.label] = simlab.step_comparison(pop, config, solver=self.solver)

        self.result_repo.write_summary(summaries)
        self.result_repo.write_replicates(summaries)
        self.result_repo.write_overlap_histograms(histograms)
        if comparisons:
            self.result_repo.write_step_comparison(comparisons)
        return summaries


class NumericalStudyService:
    """Service for theoretical standard errors over sampling-fraction grids."""

    def __init__(self, result_repo: ResultRepository | None = None) -> None:
        """Initialize service with the output repository."""
        self.result_repo = result_repo

    def run(
        self,
        grid: GridSpec,
        overlaps: Sequence[Overlap],
        *,
        population_size: int,
        seed: int,
        methods: Sequence[MethodKind] = ONE_STEP_METHODS,
    ) -> list[GridPoint]:
        """One simulated population per overlap, then the grid of theoretical SEs."""
        points: list[GridPoint] = []
        for overlap in overlaps:
            beta_r = 1.0 if overlap is Overlap.HIGH else -1.0
            rng = np.random.default_rng(simlab.replicate_seed(seed, f"numstudy-{overlap.value}", 0))
            generator = simlab.population_generator(population_size, 1.0, beta_r, rng)
            points.extend(se_ratio_grid(generator, grid.f_c, grid.f_r, overlap, methods))
        if self.result_repo is not None:
            self.result_repo.write_grid(points)
        return points


ExactCovariance = Callable[[float, float, int], float]

BRUTE_FORCE_PROBS = (0.1, 0.5, 0.9)
REFERENCE_PROBS = (0.2, 0.7, 1.0)
CENSUS_SIZES = (2, 5, 10)


class VerificationService:
    """Oracle checks of the closed forms against enumeration and finite differences."""

    def __init__(
        self,
        exact_fn: ExactCovariance = cov_Iz_exact,
        *,
        n_max: int = 4,
        cov_tol: float = 1e-12,
        grad_rtol: float = 1e-4,
        gradient_instances: int | None = None,
        seed: int = 0,
    ) -> None:
        """Initialize service with the covariance formula under test."""
        self.exact_fn = exact_fn
        self.n_max = n_max
        self.cov_tol = cov_tol
        self.grad_rtol = grad_rtol
        self.gradient_instances = settings.GRADIENT_INSTANCES if gradient_instances is None else gradient_instances
        self.seed = seed

    def covariance_checks(self) -> list[CheckResult]:
        """Enumerated covariance against the closed form for populations with common probabilities."""
        checks = []
        for N in range(2, self.n_max + 1):
            for pc in BRUTE_FORCE_PROBS:
                for pr in REFERENCE_PROBS:
                    brute = cov_Iz_bruteforce(np.full(N, pc), np.full(N, pr))[0, 1]
                    pi_z = pc / (pc + pr)
                    exact = self.exact_fn(pi_z, pi_z, N)
                    err = abs(brute - exact)
                    checks.append(
                        CheckResult(
                            name="cov_Iz_bruteforce",
                            configuration=f"N={N} pi_c={pc} pi_r={pr}",
                            error=err,
                            passed=err <= self.cov_tol,
                        ),
                    )
        return checks

    def census_checks(self) -> list[CheckResult]:
        """With both samples a census the correlation is -1 / (2N - 1)."""
        checks = []
        for N in CENSUS_SIZES:
            corr = self.exact_fn(0.5, 0.5, N) / 0.25
            err = abs(corr + 1.0 / (2 * N - 1))
            checks.append(
                CheckResult(name="census_correlation", configuration=f"N={N}", error=err, passed=err <= self.cov_tol),
            )
        return checks

    def gradient_checks(self) -> list[CheckResult]:
        """Analytic scores against central differences of the log-likelihoods."""
        rng = np.random.default_rng(self.seed)
        checks = []
        for method in ONE_STEP_METHODS:
            worst = 0.0
            for _ in range(self.gradient_instances):
                data = _random_data(rng)
                beta = rng.normal(scale=0.5, size=data.p + 1)
                analytic = score(method, data, beta)
                numeric = _central_difference(lambda b, m=method, d=data: loglik(m, d, b), beta)
                rel = float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
                worst = max(worst, rel)
            checks.append(
                CheckResult(
                    name="score_gradient",
                    configuration=f"method={method.value} instances={self.gradient_instances}",
                    error=worst,
                    passed=worst <= self.grad_rtol,
                ),
            )
        return checks

    def run(self) -> list[CheckResult]:
        """Run all checks; raises VerificationError naming every failing configuration."""
        checks = [*self.covariance_checks(), *self.census_checks(), *self.gradient_checks()]
        failed = [c for c in checks if not c.passed]
        logger.info(f"Verification: {len(checks) - len(failed)} of {len(checks)} checks passed")
        if failed:
            for c in failed:
                logger.error(f"{c.name} failed at {c.configuration}: error {c.error:.3g}")
            raise VerificationError(
                f"{len(failed)} check(s) failed, first: {failed[0].name} at {failed[0].configuration}",
                details=failed,
            )
        return checks


def _random_data(rng: np.random.Generator, p: int = 2) -> ObservedData:
    n_c = int(rng.integers(5, 15))
    n_r = int(rng.integers(5, 15))
    return ObservedData(
        conv_x=rng.normal(size=(n_c, p)),
        conv_y=rng.normal(size=n_c),
        conv_pi_r=rng.uniform(0.05, 0.9, size=n_c),
        ref_x=rng.normal(size=(n_r, p)),
        ref_pi_r=rng.uniform(0.05, 0.9, size=n_r),
    )


def _central_difference(f: Callable[[np.ndarray], float], beta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(beta)
    for j in range(beta.size):
        step = np.zeros_like(beta)
        step[j] = h
        grad[j] = (f(beta + step) - f(beta - step)) / (2 * h)
    return grad
