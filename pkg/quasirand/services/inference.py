"""Hájek mean, sandwich variances of the mean and the coefficients, confidence intervals."""

import logging

import numpy as np
from scipy.stats import norm

from quasirand.core.config import settings
from quasirand.core.exceptions import InputError
from quasirand.models.models import (
    InferenceResult,
    MethodKind,
    ObservedData,
    PlugInConvention,
    PropensityFit,
    VarianceComponents,
)
from quasirand.services.designs import design_variance_hh
from quasirand.services.propensity import link_eval, population_terms

logger = logging.getLogger(__name__)


def hajek_mean(y: np.ndarray, pi_c_hat: np.ndarray) -> tuple[float, float]:
    """Ratio-form inverse-probability-weighted mean and the estimated population size."""
    y = np.asarray(y, dtype=np.float64)
    pi = np.asarray(pi_c_hat, dtype=np.float64)
    if y.size == 0:
        raise InputError("Hájek mean of an empty sample")
    if y.shape != pi.shape:
        raise InputError("y and pi_c_hat must have the same length")
    if not (np.all(pi > 0) and np.all(np.isfinite(pi))):
        raise InputError("estimated participation probabilities must be positive")
    w = 1.0 / pi
    n_hat = float(np.sum(w))
    return float(np.sum(w * y) / n_hat), n_hat


def weighted_gram(X: np.ndarray, coef: np.ndarray) -> np.ndarray:
    gram = (X * coef[:, None]).T @ X
    return (gram + gram.T) / 2


def variance_components(
    method: MethodKind,
    data: ObservedData,
    fit: PropensityFit,
    mu_hat: float,
    *,
    convention: PlugInConvention = PlugInConvention.CONVENIENCE,
) -> VarianceComponents:
    """Plug-in estimates of H, A, C, D, b and Var[U(mu)].

    Population sums involving y are estimated from the convenience sample with weights
    1 / pi_c. Outcome-free sums (H, A) follow ``convention``: the same convenience
    weighting, or the reference sample with weights w_r. D is the Hansen-Hurwitz design
    variance of the reference part of the score.
    """
    if method is MethodKind.ALP:
        raise InputError("ALP has no closed-form variance")
    if not fit.converged:
        logger.debug(f"{method.value}: variance components of an unconverged fit")

    beta = fit.beta
    Xc = data.conv_design
    pi_c = fit.pi_c_hat_conv
    if method is MethodKind.ILR:
        pi_r_conv = data.conv_pi_r
        if pi_r_conv is None:
            raise InputError("ILR requires conv_pi_r")
    else:
        pi_r_conv = np.ones(data.n_c)
    terms_c = population_terms(method, pi_c, pi_r_conv)
    w_c = 1.0 / pi_c
    resid = data.conv_y - mu_hat

    C_vec = Xc.T @ (w_c * terms_c.c * resid)
    c_b = Xc.T @ (w_c * (1.0 - pi_c) * resid)
    var_U_mu = float(np.sum(w_c * (1.0 - pi_c) / pi_c * resid**2))

    Xr = data.ref_design
    pi_c_ref = link_eval(Xr @ beta, 1.0).pi_c
    terms_r = population_terms(method, pi_c_ref, data.ref_pi_r)
    if convention is PlugInConvention.CONVENIENCE:
        H = weighted_gram(Xc, w_c * terms_c.h)
        A = weighted_gram(Xc, w_c * terms_c.a)
    else:
        H = weighted_gram(Xr, data.ref_w * terms_r.h)
        A = weighted_gram(Xr, data.ref_w * terms_r.a)

    design = design_variance_hh(Xr * terms_r.d[:, None], data.ref_pi_r)
    return assemble_components(
        H,
        A,
        C_vec,
        design.matrix,
        c_b,
        var_U_mu,
        float(np.sum(w_c)),
        design_variance_estimable=design.estimable,
    )


def assemble_components(
    H: np.ndarray,
    A: np.ndarray,
    C_vec: np.ndarray,
    D: np.ndarray,
    c_b: np.ndarray,
    var_U_mu: float,
    n_hat: float,
    *,
    design_variance_estimable: bool = True,
) -> VarianceComponents:
    condition = float(np.linalg.cond(H))
    if np.isfinite(condition) and condition <= settings.CONDITION_LIMIT:
        b = np.linalg.solve(H, c_b)
    else:
        logger.warning(f"H is ill-conditioned (condition number {condition:.3g}); variances reported as Inf")
        b = np.full_like(c_b, np.nan)
    return VarianceComponents(
        H=H,
        A=A,
        C_vec=C_vec,
        D=D,
        b=b,
        var_U_mu=max(var_U_mu, 0.0),
        n_hat=n_hat,
        condition_number=condition,
        design_variance_estimable=design_variance_estimable,
    )


def _singular(components: VarianceComponents) -> bool:
    return not (np.isfinite(components.condition_number) and components.condition_number <= settings.CONDITION_LIMIT)


def var_mu_raw(components: VarianceComponents) -> float:
    """Unclamped plug-in variance of the Hájek mean; +inf when H is singular."""
    if _singular(components):
        return float("inf")
    b = components.b
    quad = b @ (components.A + components.D) @ b
    return float((components.var_U_mu - 2.0 * b @ components.C_vec + quad) / components.n_hat**2)


def var_mu(components: VarianceComponents) -> float:
    """Plug-in variance of the Hájek mean, clamped at zero."""
    value = var_mu_raw(components)
    if value < 0:
        logger.warning(f"Negative plug-in variance {value:.3g} clamped to 0")
        return 0.0
    return value


def var_beta(components: VarianceComponents) -> np.ndarray:
    """Sandwich variance H^-1 (A + D) H^-1 of the coefficients."""
    k = components.H.shape[0]
    if _singular(components):
        return np.full((k, k), np.inf)
    h_inv = np.linalg.inv(components.H)
    cov = h_inv @ (components.A + components.D) @ h_inv
    return (cov + cov.T) / 2


def confidence_interval(mu_hat: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    """Normal-theory interval; the whole real line when the variance is not finite."""
    if not np.isfinite(variance):
        logger.debug("Confidence interval undefined for a non-finite variance")
        return float("-inf"), float("inf")
    half = float(norm.ppf(0.5 + level / 2.0)) * float(np.sqrt(variance))
    return mu_hat - half, mu_hat + half


def infer(
    method: MethodKind,
    data: ObservedData,
    fit: PropensityFit,
    *,
    convention: PlugInConvention = PlugInConvention.CONVENIENCE,
    level: float | None = None,
) -> InferenceResult:
    """Hájek mean of the convenience outcomes with its plug-in variance and interval."""
    level = settings.CI_LEVEL if level is None else level
    mu_hat, n_hat = hajek_mean(data.conv_y, fit.pi_c_hat_conv)
    k = data.p + 1
    if method is MethodKind.ALP:
        nan = float("nan")
        return InferenceResult(
            mu_hat=mu_hat,
            n_hat=n_hat,
            var_mu=nan,
            var_beta=np.full((k, k), np.nan),
            se_mu=nan,
            ci=(nan, nan),
        )

    components = variance_components(method, data, fit, mu_hat, convention=convention)
    raw = var_mu_raw(components)
    clamped = bool(raw < 0)
    value = var_mu(components)
    return InferenceResult(
        mu_hat=mu_hat,
        n_hat=n_hat,
        var_mu=value,
        var_beta=var_beta(components),
        se_mu=float(np.sqrt(value)),
        ci=confidence_interval(mu_hat, value, level),
        components=components,
        var_mu_clamped=clamped,
    )
