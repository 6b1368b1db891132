"""Population-level variances and the exact covariance of stacked-sample indicators."""

import logging
from collections.abc import Callable, Sequence

import numpy as np
from scipy.optimize import bisect

from quasirand.core.exceptions import InputError, NumericError
from quasirand.models.models import (
    ONE_STEP_METHODS,
    FinitePopulation,
    GridPoint,
    MethodKind,
    Overlap,
    design_matrix,
)
from quasirand.services.designs import design_variance_poisson_theoretical, with_reference_fraction
from quasirand.services.inference import assemble_components, var_beta, var_mu, weighted_gram
from quasirand.services.propensity import population_terms

logger = logging.getLogger(__name__)

PopulationGenerator = Callable[[float], FinitePopulation]

INTERCEPT_BRACKET = (-20.0, 20.0)
INTERCEPT_XTOL = 1e-6
BRUTE_FORCE_MAX_N = 6


def theoretical_variances(pop: FinitePopulation, method: MethodKind) -> tuple[float, np.ndarray]:
    """Asymptotic variances of the mean and the coefficients from exact population sums."""
    X = design_matrix(pop.x)
    pi_c = pop.pi_c_true
    terms = population_terms(method, pi_c, pop.pi_r_true)
    resid = pop.y - pop.mu

    components = assemble_components(
        H=weighted_gram(X, terms.h),
        A=weighted_gram(X, terms.a),
        C_vec=X.T @ (terms.c * resid),
        D=design_variance_poisson_theoretical(X * terms.d[:, None], pop.pi_r_true).matrix,
        c_b=X.T @ ((1.0 - pi_c) * resid),
        var_U_mu=float(np.sum((1.0 - pi_c) / pi_c * resid**2)),
        n_hat=float(pop.N),
    )
    return var_mu(components), var_beta(components)


def intercept_for_fraction(pop_generator: PopulationGenerator, f_c: float) -> float:
    """Intercept beta_c0 whose population mean participation probability equals f_c."""
    if not 0 < f_c < 1:
        raise InputError(f"participation fraction {f_c} outside (0, 1)")

    def gap(beta_c0: float) -> float:
        return float(np.mean(pop_generator(beta_c0).pi_c_true)) - f_c

    low, high = INTERCEPT_BRACKET
    g_low, g_high = gap(low), gap(high)
    if g_low * g_high > 0:
        raise NumericError(
            f"cannot bracket f_c={f_c}: mean pi_c - f_c is {g_low:.3g} at {low} and {g_high:.3g} at {high}",
        )
    return float(bisect(gap, low, high, xtol=INTERCEPT_XTOL))


def se_ratio_grid(
    pop_generator: PopulationGenerator,
    f_c_list: Sequence[float],
    f_r_list: Sequence[float],
    overlap: Overlap,
    methods: Sequence[MethodKind] = ONE_STEP_METHODS,
) -> list[GridPoint]:
    """Theoretical standard errors over a grid of sampling fractions, in input order."""
    if not f_c_list or not f_r_list:
        raise InputError("grid needs at least one f_c and one f_r value")
    points: list[GridPoint] = []
    for f_c in f_c_list:
        beta_c0 = intercept_for_fraction(pop_generator, f_c)
        base = pop_generator(beta_c0)
        logger.info(f"{overlap.value} overlap: f_c={f_c} -> beta_c0={beta_c0:.6f}")
        for f_r in f_r_list:
            pop = with_reference_fraction(base, f_r)
            se_beta: dict[MethodKind, float] = {}
            se_mu: dict[MethodKind, float] = {}
            for method in methods:
                v_mu, v_beta = theoretical_variances(pop, method)
                slope = 1 if v_beta.shape[0] > 1 else 0
                se_beta[method] = float(np.sqrt(v_beta[slope, slope]))
                se_mu[method] = float(np.sqrt(v_mu))
            points.append(GridPoint(f_c=f_c, f_r=f_r, overlap=overlap, se_beta=se_beta, se_mu=se_mu))
    return points


def _check_open_prob(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise InputError(f"{name}={value} outside (0, 1)")


def cov_Iz_exact(pi_z_i: float, pi_z_j: float, N: int) -> float:  # noqa: N802
    """Covariance of the convenience indicators of two stacked units, given both are in the stack."""
    _check_open_prob("pi_z_i", pi_z_i)
    _check_open_prob("pi_z_j", pi_z_j)
    if N < 2:
        raise InputError("population size must be at least 2")
    m = N - 1
    F = 1.0 / (1.0 + ((1.0 - pi_z_i) * pi_z_j + pi_z_i * (1.0 - pi_z_j)) / m)
    G = (1.0 + (1.0 - pi_z_j) / m) * (1.0 + (1.0 - pi_z_i) / m)
    return pi_z_i * pi_z_j * F * (1.0 - F * G)


def cov_Iz_correlation(pi_z_i: float, pi_z_j: float, N: int) -> float:  # noqa: N802
    """cov_Iz_exact scaled by the Bernoulli standard deviations."""
    cov = cov_Iz_exact(pi_z_i, pi_z_j, N)
    return cov / float(np.sqrt(pi_z_i * (1 - pi_z_i) * pi_z_j * (1 - pi_z_j)))


def cov_Iz_bruteforce(pi_c: np.ndarray, pi_r: np.ndarray) -> np.ndarray:  # noqa: N802
    """Exhaustive-enumeration covariance matrix of (I_z(e1), I_z(e2)).

    The frame is two copies of the population, one per sample, each copy Poisson-sampled.
    (e1, e2) is an ordered pair of distinct frame positions drawn uniformly, and the
    moments are conditional on both positions being selected. The off-diagonal entry is
    the covariance that cov_Iz_exact gives for a population with common pi_c and pi_r.
    """
    pi_c = np.asarray(pi_c, dtype=np.float64).reshape(-1)
    pi_r = np.asarray(pi_r, dtype=np.float64).reshape(-1)
    N = pi_c.size
    if pi_r.size != N:
        raise InputError("pi_c and pi_r must have the same length")
    if N < 1 or N > BRUTE_FORCE_MAX_N:
        raise InputError(f"brute force supports 1 <= N <= {BRUTE_FORCE_MAX_N}, got {N}")
    probs = np.concatenate((pi_c, pi_r))
    if np.any(probs < 0) or np.any(probs > 1):
        raise InputError("probabilities must lie in [0, 1]")
    if not np.any(pi_r > 0):
        raise InputError("reference probabilities are all zero, the stacked sample has no reference part")

    M = 2 * N
    outcomes = ((np.arange(2**M)[:, None] >> np.arange(M)) & 1).astype(bool)
    weight = np.prod(np.where(outcomes, probs, 1.0 - probs), axis=1)
    m = outcomes.sum(axis=1).astype(np.float64)
    a = outcomes[:, :N].sum(axis=1).astype(np.float64)
    pairs = M * (M - 1)

    both = float(np.sum(weight * m * (m - 1))) / pairs
    if both <= 0:
        raise InputError("two selected units are impossible under these probabilities")
    p1 = float(np.sum(weight * a * (m - 1))) / pairs / both
    p12 = float(np.sum(weight * a * (a - 1))) / pairs / both
    var = p1 * (1.0 - p1)
    cov = p12 - p1 * p1
    return np.array([[var, cov], [cov, var]])
