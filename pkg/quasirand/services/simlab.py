"""Monte Carlo engine: populations, scenarios, replicates and their summaries.

One population is generated per scenario and sampled repeatedly. Every replicate owns
a generator seeded from a stable hash of (master seed, scenario label, replicate index),
so results do not depend on worker count or scheduling order.
"""

import hashlib
import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from quasirand.core.exceptions import InputError, QuasirandError
from quasirand.models.models import (
    ONE_STEP_METHODS,
    FinitePopulation,
    MCSummary,
    MethodEstimate,
    MethodKind,
    ObservedData,
    Overlap,
    ParameterSummary,
    ReplicateResult,
    ScenarioConfig,
    ScenarioId,
    SolverConfig,
)
from quasirand.services.designs import pps_systematic_sample, poisson_sample, with_reference_fraction
from quasirand.services.inference import confidence_interval, infer
from quasirand.services.propensity import fit_method, predict_pi_c

logger = logging.getLogger(__name__)

Y_INTERCEPT = 1.0
Y_SLOPE = 1.0
Y_SD = 1.5
SIZE_INTERCEPT = 1.0


class ScenarioSpec(NamedTuple):
    N: int
    beta_c0: float
    f_r: float
    reference_is_population: bool = False


# Population sizes follow n_c / f_c of each setting
SCENARIOS: dict[ScenarioId, ScenarioSpec] = {
    ScenarioId.S1: ScenarioSpec(N=60_000, beta_c0=-5.0, f_r=0.01),
    ScenarioId.S2: ScenarioSpec(N=10_000, beta_c0=-5.0, f_r=0.01),
    ScenarioId.S3: ScenarioSpec(N=6_000, beta_c0=-2.5, f_r=0.10),
    ScenarioId.S4: ScenarioSpec(N=1_000, beta_c0=-2.5, f_r=0.10),
    ScenarioId.S5: ScenarioSpec(N=10_000, beta_c0=-5.0, f_r=0.10),
    ScenarioId.S6: ScenarioSpec(N=10_000, beta_c0=-2.5, f_r=0.01),
    ScenarioId.S7: ScenarioSpec(N=1_000, beta_c0=0.0, f_r=1.0, reference_is_population=True),
}


def scenario_config(
    scenario: ScenarioId | str,
    overlap: Overlap | str = Overlap.HIGH,
    *,
    reps: int = 1000,
    master_seed: int = 0,
    include_alp: bool = False,
) -> ScenarioConfig:
    """Configuration of a predefined scenario."""
    try:
        scenario_id = ScenarioId(scenario)
        spec = SCENARIOS[scenario_id]
    except (ValueError, KeyError) as e:
        raise InputError(f"Unknown scenario {scenario!r}, expected one of {[s.value for s in SCENARIOS]}") from e
    overlap = Overlap(overlap)
    return ScenarioConfig(
        id=scenario_id,
        N=spec.N,
        beta_c0=spec.beta_c0,
        beta_c1=1.0,
        beta_r=1.0 if overlap is Overlap.HIGH else -1.0,
        f_r_target=spec.f_r,
        reps=reps,
        master_seed=master_seed,
        reference_is_population=spec.reference_is_population,
        include_alp=include_alp,
    )


def replicate_seed(master_seed: int, label: str, rep_index: int) -> int:
    """Stable 64-bit seed for one replicate."""
    digest = hashlib.blake2b(f"{master_seed}:{label}:{rep_index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def population_generator(
    N: int,
    beta_c1: float,
    beta_r: float,
    rng: np.random.Generator,
) -> Callable[[float], FinitePopulation]:
    """Draw covariates and outcomes once; the returned callable sets the participation intercept.

    Reference probabilities of the generated populations are all 1, callers calibrate them
    with ``with_reference_fraction``.
    """
    if N < 10:
        raise InputError("population needs at least 10 units")
    x = rng.standard_normal(N)
    y = Y_INTERCEPT + Y_SLOPE * x + Y_SD * rng.standard_normal(N)
    size_r = expit(SIZE_INTERCEPT + beta_r * x)

    def build(beta_c0: float) -> FinitePopulation:
        pi_c = np.clip(expit(beta_c0 + beta_c1 * x), 1e-12, 1.0 - 1e-12)
        return FinitePopulation(x=x, y=y, pi_c_true=pi_c, size_r=size_r, pi_r_true=np.ones(N))

    return build


def generate_population(
    N: int,
    beta_c0: float,
    beta_c1: float,
    beta_r: float,
    rng: np.random.Generator,
    *,
    f_r: float = 1.0,
) -> FinitePopulation:
    """Simulated population with a logistic participation model and PPS size measures."""
    pop = population_generator(N, beta_c1, beta_r, rng)(beta_c0)
    return pop if f_r >= 1.0 else with_reference_fraction(pop, f_r)


def scenario_population(config: ScenarioConfig) -> FinitePopulation:
    rng = np.random.default_rng(replicate_seed(config.master_seed, f"{config.label}:population", 0))
    f_r = 1.0 if config.reference_is_population else config.f_r_target
    return generate_population(config.N, config.beta_c0, config.beta_c1, config.beta_r, rng, f_r=f_r)


def draw_samples(
    pop: FinitePopulation,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Poisson convenience sample and systematic PPS reference sample."""
    s_c = poisson_sample(pop.pi_c_true, rng)
    s_r = np.arange(pop.N) if config.reference_is_population else pps_systematic_sample(pop.pi_r_true, rng)
    return s_c, s_r


def _failed_estimate(method: MethodKind) -> MethodEstimate:
    nan = float("nan")
    return MethodEstimate(
        method=method,
        beta_c1=nan,
        se_beta_c1=nan,
        mu_hat=nan,
        se_mu=nan,
        beta_covered=False,
        mu_covered=False,
        converged=False,
        variance_finite=False,
    )


def _estimate(
    method: MethodKind,
    data: ObservedData,
    config: ScenarioConfig,
    mu: float,
    solver: SolverConfig,
) -> MethodEstimate:
    try:
        fitted = fit_method(method, data, solver)
        result = infer(method, data, fitted)
    except (QuasirandError, np.linalg.LinAlgError, ValueError) as e:
        logger.debug(f"{config.label} {method.value}: {e!s}")
        return _failed_estimate(method)

    beta = fitted.beta
    slope = float(beta[1])
    if method is MethodKind.ALP:
        # no closed-form variance: NaN standard errors, never counted in coverage
        return MethodEstimate(
            method=method,
            beta_c1=slope,
            se_beta_c1=float("nan"),
            mu_hat=result.mu_hat,
            se_mu=float("nan"),
            beta_covered=False,
            mu_covered=False,
            converged=fitted.converged,
            variance_finite=False,
            beta_hat=tuple(float(b) for b in beta),
        )

    se_slope = float(result.se_beta[1])
    var_ok = result.variance_finite and bool(np.isfinite(se_slope))
    low, high = confidence_interval(slope, se_slope**2 if var_ok else float("inf"))
    return MethodEstimate(
        method=method,
        beta_c1=slope,
        se_beta_c1=se_slope if var_ok else float("inf"),
        mu_hat=result.mu_hat,
        se_mu=result.se_mu if var_ok else float("inf"),
        beta_covered=var_ok and bool(low <= config.beta_c1 <= high),
        mu_covered=var_ok and result.covers(mu),
        converged=fitted.converged,
        variance_finite=var_ok,
        var_mu_clamped=result.var_mu_clamped,
        beta_hat=tuple(float(b) for b in beta),
    )


def replicate_methods(config: ScenarioConfig) -> tuple[MethodKind, ...]:
    """Methods fitted in every replicate; ALP joins when the scenario asks for it."""
    return (*ONE_STEP_METHODS, MethodKind.ALP) if config.include_alp else ONE_STEP_METHODS


def run_replicate(
    pop: FinitePopulation,
    config: ScenarioConfig,
    rep_index: int,
    solver: SolverConfig | None = None,
) -> ReplicateResult:
    """Draw both samples and fit every replicate method once."""
    solver = solver or SolverConfig()
    methods = replicate_methods(config)
    rng = np.random.default_rng(replicate_seed(config.master_seed, config.label, rep_index))
    s_c, s_r = draw_samples(pop, config, rng)
    if s_c.size == 0 or s_r.size == 0:
        logger.warning(f"{config.label} replicate {rep_index}: empty sample")
        return ReplicateResult(
            rep_index=rep_index,
            n_c=int(s_c.size),
            n_r=int(s_r.size),
            estimates=[_failed_estimate(m) for m in methods],
        )
    data = ObservedData.from_population(pop, s_c, s_r, reference_is_population=config.reference_is_population)
    mu = pop.mu
    return ReplicateResult(
        rep_index=rep_index,
        n_c=data.n_c,
        n_r=data.n_r,
        estimates=[_estimate(m, data, config, mu, solver) for m in methods],
    )


def _summarize(
    method: MethodKind,
    parameter: str,
    truth: float,
    estimates: np.ndarray,
    se_hats: np.ndarray,
    covered: np.ndarray,
    converged: np.ndarray,
) -> ParameterSummary:
    """Summary of one parameter.

    Replicates with an infinite SE-hat are counted in ``inf_variance`` and left out of
    both coverage and the mean SE-hat; NaN SE-hats (no variance formula) are left out too.
    """
    used = np.isfinite(estimates)
    est = estimates[used]
    n_used = int(used.sum())
    inf_var = int(np.sum(used & np.isinf(se_hats)))
    with_variance = used & np.isfinite(se_hats)
    nan = float("nan")
    if n_used == 0:
        return ParameterSummary(
            method=method,
            parameter=parameter,
            truth=truth,
            mean=nan,
            se=nan,
            mean_se_hat=nan,
            coverage_95=nan,
            rmse=0.0,
            nonconverged=int(np.sum(~converged)),
            inf_variance=inf_var,
            n_used=0,
        )
    if with_variance.any():
        mean_se_hat = float(np.sqrt(np.mean(se_hats[with_variance] ** 2)))
        coverage = float(np.mean(covered[with_variance]))
    else:
        mean_se_hat = float("inf") if inf_var else nan
        coverage = nan
    return ParameterSummary(
        method=method,
        parameter=parameter,
        truth=truth,
        mean=float(np.mean(est)),
        se=float(np.std(est, ddof=1)) if n_used > 1 else nan,
        mean_se_hat=mean_se_hat,
        coverage_95=coverage,
        rmse=float(np.sqrt(np.mean((est - truth) ** 2))),
        nonconverged=int(np.sum(~converged)),
        inf_variance=inf_var,
        n_used=n_used,
    )


def summarize_replicates(config: ScenarioConfig, mu: float, replicates: list[ReplicateResult]) -> MCSummary:
    """Aggregate replicate results into per-method, per-parameter summaries."""
    replicates = sorted(replicates, key=lambda r: r.rep_index)
    rows: list[ParameterSummary] = []
    flagged: list[MethodKind] = []
    for method in replicate_methods(config):
        picked = [next(e for e in r.estimates if e.method is method) for r in replicates]
        converged = np.array([e.converged for e in picked])
        for parameter, truth, est_attr, se_attr, cov_attr in (
            ("beta_c1", config.beta_c1, "beta_c1", "se_beta_c1", "beta_covered"),
            ("mu", mu, "mu_hat", "se_mu", "mu_covered"),
        ):
            rows.append(
                _summarize(
                    method,
                    parameter,
                    truth,
                    np.array([getattr(e, est_attr) for e in picked], dtype=np.float64),
                    np.array([getattr(e, se_attr) for e in picked], dtype=np.float64),
                    np.array([getattr(e, cov_attr) for e in picked]),
                    converged,
                ),
            )
        if np.mean(~converged) > 0.5:
            logger.warning(f"{config.label} {method.value}: {int(np.sum(~converged))} of {len(picked)} fits failed")
            flagged.append(method)
    return MCSummary(config=config, mu=mu, rows=rows, replicates=replicates, flagged_methods=flagged)


def run_monte_carlo(
    config: ScenarioConfig,
    *,
    workers: int = 1,
    solver: SolverConfig | None = None,
    population: FinitePopulation | None = None,
) -> MCSummary:
    """Run all replicates of a scenario, in parallel when ``workers`` > 1."""
    pop = population or scenario_population(config)
    job = partial(run_replicate, pop, config, solver=solver or SolverConfig())
    indices = range(config.reps)
    logger.info(f"{config.label}: {config.reps} replicates on {workers} worker(s), N={pop.N}, mu={pop.mu:.4f}")

    replicates: list[ReplicateResult] = []
    if workers <= 1:
        for done, rep in enumerate(map(job, indices), start=1):
            replicates.append(rep)
            if done % 100 == 0:
                logger.info(f"{config.label}: {done}/{config.reps} replicates")
    else:
        chunk = max(1, config.reps // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            replicates = list(executor.map(job, indices, chunksize=chunk))
    return summarize_replicates(config, pop.mu, replicates)


class OverlapHistogram(NamedTuple):
    edges: np.ndarray
    conv_counts: np.ndarray
    ref_counts: np.ndarray


def overlap_histogram(pop: FinitePopulation, s_c: np.ndarray, s_r: np.ndarray, bins: int = 30) -> OverlapHistogram:
    """Counts of convenience and reference units over bins spanning the population range of x."""
    if bins < 2:
        raise InputError("histogram needs at least 2 bins")
    x = pop.x[:, 0]
    edges = np.linspace(float(x.min()), float(x.max()), bins + 1)
    conv_counts, _ = np.histogram(x[np.asarray(s_c, dtype=int)], bins=edges)
    ref_counts, _ = np.histogram(x[np.asarray(s_r, dtype=int)], bins=edges)
    return OverlapHistogram(edges=edges, conv_counts=conv_counts, ref_counts=ref_counts)


class StepComparison(NamedTuple):
    """Predicted against true participation probabilities over a whole population."""

    true_pi_c: np.ndarray
    predicted: dict[MethodKind, np.ndarray]
    bins: list[dict[str, float]]


def step_comparison(
    pop: FinitePopulation,
    config: ScenarioConfig,
    rep_index: int = 0,
    *,
    n_bins: int = 10,
    solver: SolverConfig | None = None,
) -> StepComparison:
    """Fit all four methods on one sample pair and predict pi_c for every population unit.

    ``bins`` holds one record per decile of the true pi_c with the mean true value and,
    per method, the mean prediction and its relative error.
    """
    solver = solver or SolverConfig()
    rng = np.random.default_rng(replicate_seed(config.master_seed, f"{config.label}:steps", rep_index))
    s_c, s_r = draw_samples(pop, config, rng)
    data = ObservedData.from_population(pop, s_c, s_r, reference_is_population=config.reference_is_population)
    predicted = {
        method: predict_pi_c(fit_method(method, data, solver), pop.x)
        for method in (*ONE_STEP_METHODS, MethodKind.ALP)
    }

    true_pi = pop.pi_c_true
    order = np.argsort(true_pi, kind="stable")
    bins: list[dict[str, float]] = []
    for decile, idx in enumerate(np.array_split(order, n_bins)):
        if idx.size == 0:
            continue
        record: dict[str, float] = {"bin": float(decile), "mean_true": float(np.mean(true_pi[idx]))}
        for method, values in predicted.items():
            mean_pred = float(np.mean(values[idx]))
            record[f"mean_{method.value}"] = mean_pred
            record[f"relerr_{method.value}"] = mean_pred / record["mean_true"] - 1.0
            record[f"above_one_{method.value}"] = float(np.mean(values[idx] > 1.0))
        bins.append(record)
    return StepComparison(true_pi_c=true_pi, predicted=predicted, bins=bins)
