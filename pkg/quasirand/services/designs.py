"""Sampling designs: probability calibration, Poisson and systematic PPS selection, design variances."""

import logging

import numpy as np

from quasirand.core.exceptions import InputError
from quasirand.models.models import DesignVarianceEstimate, EstimatorKind, FinitePopulation

logger = logging.getLogger(__name__)

CERTAINTY = 1.0 - 1e-12


def calibrate_inclusion_probs(sizes: np.ndarray, n: float) -> np.ndarray:
    """Scale size measures to inclusion probabilities summing to ``n``.

    Units whose scaled size reaches 1 are taken with certainty and the remaining
    expected size is spread over the other units, repeated until no new unit is capped.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    N = sizes.size
    if not np.all(np.isfinite(sizes)) or np.any(sizes < 0):
        raise InputError("sizes must be finite and non-negative")
    if not np.any(sizes > 0):
        raise InputError("sizes are all zero")
    if np.any(sizes == 0):
        raise InputError("sizes must be strictly positive")
    if n < 1 or n > N:
        raise InputError(f"target sample size {n} outside [1, {N}]")

    pi = np.zeros(N)
    capped = np.zeros(N, dtype=bool)
    for _ in range(N + 1):
        free = ~capped
        remaining = n - capped.sum()
        pi[free] = remaining * sizes[free] / sizes[free].sum()
        pi[capped] = 1.0
        over = free & (pi >= 1.0)
        if not over.any():
            break
        capped |= over
    return np.minimum(pi, 1.0)


def poisson_sample(pi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli selection; returns sorted unit indices."""
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0) or np.any(pi > 1) or not np.all(np.isfinite(pi)):
        raise InputError("inclusion probabilities must lie in [0, 1]")
    return np.flatnonzero(rng.random(pi.size) < pi)


def pps_systematic_sample(pi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Fixed-size systematic PPS on a randomly permuted frame; returns sorted unit indices."""
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi <= 0) or np.any(pi > 1) or not np.all(np.isfinite(pi)):
        raise InputError("inclusion probabilities must lie in (0, 1]")
    total = float(pi.sum())
    n = round(total)
    if abs(total - n) > 1e-6:
        raise InputError(f"inclusion probabilities sum to {total}, not an integer sample size")

    order = rng.permutation(pi.size)
    cum = np.cumsum(pi[order])
    cum *= n / cum[-1]
    prev = np.concatenate(([0.0], cum[:-1]))
    start = rng.random()
    hits = np.floor(cum - start) - np.floor(prev - start)
    return np.sort(order[hits > 0])


def design_variance_hh(summands: np.ndarray, pi_r: np.ndarray) -> DesignVarianceEstimate:
    """With-replacement estimate of the design variance of sum_{S_r} w_r a_i.

    Certainty units (pi_r = 1) carry no design variance and are left out. With a single
    non-certainty unit the variance cannot be estimated: the matrix is zero and
    ``estimable`` is False.
    """
    a = np.asarray(summands, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    pi_r = np.asarray(pi_r, dtype=np.float64)
    n_r, k = a.shape
    if n_r == 0:
        raise InputError("design variance of an empty reference sample")
    if pi_r.shape != (n_r,):
        raise InputError(f"pi_r must have length {n_r}")

    random_units = pi_r < CERTAINTY
    z = a[random_units] / pi_r[random_units, None]
    m = z.shape[0]
    if m < 2:
        if m == 1:
            logger.warning("Only one non-certainty reference unit; design variance set to zero")
        return DesignVarianceEstimate(
            matrix=np.zeros((k, k)),
            estimator_kind=EstimatorKind.HANSEN_HURWITZ,
            estimable=m == 0,
        )

    centered = z - z.mean(axis=0)
    matrix = m / (m - 1) * (centered.T @ centered)
    return DesignVarianceEstimate(matrix=(matrix + matrix.T) / 2, estimator_kind=EstimatorKind.HANSEN_HURWITZ)


def design_variance_poisson_theoretical(summands: np.ndarray, pi_r_true: np.ndarray) -> DesignVarianceEstimate:
    """Poisson-design variance sum_U (1 - pi_r) / pi_r a_i a_i^T over the whole population."""
    a = np.asarray(summands, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    pi_r = np.asarray(pi_r_true, dtype=np.float64)
    if pi_r.shape != (a.shape[0],):
        raise InputError(f"pi_r_true must have length {a.shape[0]}")
    if np.any(pi_r <= 0):
        raise InputError("pi_r_true must be strictly positive everywhere")
    factor = (1.0 - pi_r) / pi_r
    matrix = (a * factor[:, None]).T @ a
    return DesignVarianceEstimate(
        matrix=(matrix + matrix.T) / 2,
        estimator_kind=EstimatorKind.POISSON_THEORETICAL,
    )


def with_reference_fraction(pop: FinitePopulation, f_r: float) -> FinitePopulation:
    """Copy of ``pop`` with reference probabilities calibrated to the sampling fraction f_r."""
    if not 0 < f_r <= 1:
        raise InputError(f"reference fraction {f_r} outside (0, 1]")
    n_r = max(1, round(f_r * pop.N))
    pi_r = np.ones(pop.N) if n_r >= pop.N else calibrate_inclusion_probs(pop.size_r, n_r)
    return FinitePopulation(x=pop.x, y=pop.y, pi_c_true=pop.pi_c_true, size_r=pop.size_r, pi_r_true=pi_r)
