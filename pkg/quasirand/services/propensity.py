"""Participation-probability estimators.

Links, (pseudo-)log-likelihoods, analytic scores and information matrices for the
CLW, ILR and PILR estimators, a Fisher-scoring solver shared by all three, and the
two-step ALP baseline fitted as a weighted logistic regression.

ILR and PILR share one form. Every stacked row carries an indicator I (1 for
convenience rows), a weight v and an offset probability q, and the stacked
membership probability is pi_s = pi_c / (pi_c + q):

    ILR:   q = pi_r,  v = 1
    PILR:  q = 1,     v = 1 on convenience rows, w_r on reference rows

The log-likelihood is sum v [I log pi_s + (1 - I) log(1 - pi_s)] and, since
d logit(pi_s) / d eta = 1 - pi_c, the score is sum v (I - pi_s)(1 - pi_c) x.
"""

import logging
import warnings
from typing import NamedTuple

import numpy as np
import statsmodels.api as sm
from scipy.special import expit
from statsmodels.tools.sm_exceptions import PerfectSeparationError, PerfectSeparationWarning

from quasirand.core.exceptions import InputError, MethodRequirementError, NumericError
from quasirand.models.models import (
    LinkEval,
    MethodKind,
    ObservedData,
    PropensityFit,
    PropensityParams,
    SolverConfig,
    design_matrix,
)

logger = logging.getLogger(__name__)

ETA_BOUND = 35.0
PROB_FLOOR = 1e-12
# |eta| beyond this means fitted probabilities are numerically 0 or 1
SATURATION_ETA = 27.0
STEP_TOL = 1e-4
# a Newton step this large at a vanishing score only happens when estimates run off to infinity
SEPARATION_STEP = 0.1


def _clip(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _scalar_or_array(value: np.ndarray) -> float | np.ndarray:
    return float(value) if np.ndim(value) == 0 else value


def _check_probs(name: str, value: np.ndarray, *, upper_open: bool) -> None:
    upper_ok = np.all(value < 1) if upper_open else np.all(value <= 1)
    if not (np.all(value > 0) and upper_ok):
        interval = "(0, 1)" if upper_open else "(0, 1]"
        raise InputError(f"{name} must lie in {interval}")


def crisp(pi_c: float | np.ndarray, pi_r: float | np.ndarray) -> float | np.ndarray:
    """Stacked-sample membership probability pi_c / (pi_c + pi_r)."""
    pi_c, pi_r = np.asarray(pi_c, dtype=np.float64), np.asarray(pi_r, dtype=np.float64)
    _check_probs("pi_c", pi_c, upper_open=True)
    _check_probs("pi_r", pi_r, upper_open=False)
    return _scalar_or_array(pi_c / (pi_c + pi_r))


def delta_link(pi_c: float | np.ndarray) -> float | np.ndarray:
    """crisp against a reference probability of one."""
    pi_c = np.asarray(pi_c, dtype=np.float64)
    _check_probs("pi_c", pi_c, upper_open=True)
    return _scalar_or_array(pi_c / (1.0 + pi_c))


def crisp_with_coverage(
    pi_c: float | np.ndarray,
    p_c: float | np.ndarray,
    pi_r: float | np.ndarray,
    p_r: float | np.ndarray,
) -> float | np.ndarray:
    """crisp when each sample only reaches a covered fraction of the units."""
    arrays = [np.asarray(v, dtype=np.float64) for v in (pi_c, p_c, pi_r, p_r)]
    _check_probs("pi_c", arrays[0], upper_open=True)
    for name, value in zip(("p_c", "pi_r", "p_r"), arrays[1:], strict=True):
        _check_probs(name, value, upper_open=False)
    pi_c, p_c, pi_r, p_r = arrays
    return _scalar_or_array(pi_c * p_c / (pi_c * p_c + pi_r * p_r))


def crisp_union_keep_reference(pi_c: float | np.ndarray, pi_r: float | np.ndarray) -> float | np.ndarray:
    """Membership probability of the convenience-only part when overlapping units are kept as reference."""
    pi_c, pi_r = np.asarray(pi_c, dtype=np.float64), np.asarray(pi_r, dtype=np.float64)
    _check_probs("pi_c", pi_c, upper_open=True)
    _check_probs("pi_r", pi_r, upper_open=True)
    return _scalar_or_array(pi_c / (pi_c + pi_r - pi_c * pi_r))


def crisp_union_keep_convenience(pi_c: float | np.ndarray, pi_r: float | np.ndarray) -> float | np.ndarray:
    """Membership probability of the convenience-only part when overlapping units are kept as convenience."""
    pi_c, pi_r = np.asarray(pi_c, dtype=np.float64), np.asarray(pi_r, dtype=np.float64)
    _check_probs("pi_c", pi_c, upper_open=True)
    _check_probs("pi_r", pi_r, upper_open=True)
    return _scalar_or_array(pi_c * (1.0 - pi_r) / (pi_c + pi_r - pi_c * pi_r))


def link_eval(eta: np.ndarray, pi_r: np.ndarray | float) -> LinkEval:
    """Evaluate clamped links at linear predictors eta against offset probabilities pi_r."""
    eta = np.clip(np.asarray(eta, dtype=np.float64), -ETA_BOUND, ETA_BOUND)
    pi_c = _clip(expit(eta))
    pi_s = _clip(pi_c / (pi_c + np.asarray(pi_r, dtype=np.float64)))
    return LinkEval(pi_c=pi_c, pi_z_or_delta=pi_s, d_pi_c_d_eta=pi_c * (1.0 - pi_c))


class PopulationTerms(NamedTuple):
    """Per-unit coefficients of the population sums in the asymptotic variance.

    Each coefficient multiplies x x^T (h, a) or x (c, d); ``s_c`` is the convenience
    score coefficient and ``d`` the un-expanded reference-score summand.
    """

    pi_link: np.ndarray
    s_c: np.ndarray
    h: np.ndarray
    a: np.ndarray
    c: np.ndarray
    d: np.ndarray


def population_terms(method: MethodKind, pi_c: np.ndarray, pi_r: np.ndarray) -> PopulationTerms:
    """Summand coefficients of H, A, C and D for one method at given pi_c and pi_r."""
    pi_c = np.asarray(pi_c, dtype=np.float64)
    pi_r = np.broadcast_to(np.asarray(pi_r, dtype=np.float64), pi_c.shape)
    one_minus = 1.0 - pi_c
    if method is MethodKind.CLW:
        pi_link = pi_c
        s_c = np.ones_like(pi_c)
        h = pi_c * one_minus
        d = pi_c
    elif method is MethodKind.ILR:
        pi_link = pi_c / (pi_c + pi_r)
        s_c = (1.0 - pi_link) * one_minus
        h = (pi_c + pi_r) * pi_link * (1.0 - pi_link) * one_minus**2
        d = pi_r * pi_link * one_minus
    elif method is MethodKind.PILR:
        pi_link = pi_c / (1.0 + pi_c)
        s_c = (1.0 - pi_link) * one_minus
        h = (pi_c + 1.0) * pi_link * (1.0 - pi_link) * one_minus**2
        d = pi_link * one_minus
    else:
        raise InputError(f"No closed-form variance terms for {method.value}")
    a = pi_c * one_minus * s_c**2
    c = one_minus * s_c
    return PopulationTerms(pi_link=pi_link, s_c=s_c, h=h, a=a, c=c, d=d)


class _Stack(NamedTuple):
    X: np.ndarray
    is_conv: np.ndarray
    weight: np.ndarray
    offset: np.ndarray
    n_c: int


def _stack(method: MethodKind, data: ObservedData) -> _Stack:
    X = np.vstack((data.conv_design, data.ref_design))
    is_conv = np.concatenate((np.ones(data.n_c), np.zeros(data.n_r)))
    if method is MethodKind.ILR:
        if data.conv_pi_r is None:
            raise MethodRequirementError(
                "ILR requires conv_pi_r, the reference-design inclusion probabilities of convenience units",
            )
        weight = np.ones(X.shape[0])
        offset = np.concatenate((data.conv_pi_r, data.ref_pi_r))
    elif method in (MethodKind.PILR, MethodKind.CLW, MethodKind.ALP):
        weight = np.concatenate((np.ones(data.n_c), data.ref_w))
        offset = np.ones(X.shape[0])
    else:
        raise InputError(f"Unknown method {method}")
    return _Stack(X=X, is_conv=is_conv, weight=weight, offset=offset, n_c=data.n_c)


def _coef(beta: PropensityParams | np.ndarray) -> np.ndarray:
    if isinstance(beta, PropensityParams):
        return beta.beta
    return np.asarray(beta, dtype=np.float64)


def _loglik_terms(method: MethodKind, st: _Stack, beta: np.ndarray) -> np.ndarray:
    link = link_eval(st.X @ beta, st.offset)
    if method is MethodKind.CLW:
        pi_c = link.pi_c
        return np.where(st.is_conv > 0, np.log(pi_c) - np.log1p(-pi_c), st.weight * np.log1p(-pi_c))
    pi_s = link.pi_z_or_delta
    return st.weight * np.where(st.is_conv > 0, np.log(pi_s), np.log1p(-pi_s))


def _score(method: MethodKind, st: _Stack, beta: np.ndarray) -> np.ndarray:
    link = link_eval(st.X @ beta, st.offset)
    if method is MethodKind.CLW:
        resid = np.where(st.is_conv > 0, 1.0, -st.weight * link.pi_c)
    else:
        resid = st.weight * (st.is_conv - link.pi_z_or_delta) * (1.0 - link.pi_c)
    return st.X.T @ resid


def _info(method: MethodKind, st: _Stack, beta: np.ndarray, *, observed: bool = False) -> np.ndarray:
    link = link_eval(st.X @ beta, st.offset)
    if method is MethodKind.CLW:
        coef = np.where(st.is_conv > 0, 0.0, st.weight * link.d_pi_c_d_eta)
    else:
        pi_s = link.pi_z_or_delta
        coef = st.weight * pi_s * (1.0 - pi_s) * (1.0 - link.pi_c) ** 2
        if observed:
            coef = coef + st.weight * (st.is_conv - pi_s) * link.d_pi_c_d_eta
    info = (st.X * coef[:, None]).T @ st.X
    return (info + info.T) / 2


def loglik(method: MethodKind, data: ObservedData, beta: PropensityParams | np.ndarray) -> float:
    """(Pseudo-)log-likelihood of a one-step method at beta."""
    terms = _loglik_terms(method, _stack(method, data), _coef(beta))
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        raise NumericError(f"{method.value} log-likelihood is not finite", row=int(bad[0]))
    return float(np.sum(terms))


def score(method: MethodKind, data: ObservedData, beta: PropensityParams | np.ndarray) -> np.ndarray:
    """Analytic gradient of loglik."""
    return _score(method, _stack(method, data), _coef(beta))


def fisher_info(
    method: MethodKind,
    data: ObservedData,
    beta: PropensityParams | np.ndarray,
    *,
    plug_in: bool = False,
) -> np.ndarray:
    """Expected information at beta.

    By default the sample version used by the solver: the expected negative Hessian of the
    stacked (pseudo-)likelihood. With ``plug_in=True`` the population matrix H of the
    asymptotic variance, estimated from convenience units weighted by 1 / pi_c.
    """
    beta = _coef(beta)
    if not plug_in:
        return _info(method, _stack(method, data), beta)
    X = data.conv_design
    pi_c = link_eval(X @ beta, 1.0).pi_c
    if method is MethodKind.ILR:
        if data.conv_pi_r is None:
            raise MethodRequirementError("ILR requires conv_pi_r")
        pi_r = data.conv_pi_r
    else:
        pi_r = np.ones(data.n_c)
    terms = population_terms(method, pi_c, pi_r)
    info = (X * (terms.h / pi_c)[:, None]).T @ X
    return (info + info.T) / 2


def observed_info(method: MethodKind, data: ObservedData, beta: PropensityParams | np.ndarray) -> np.ndarray:
    """Negative Hessian of loglik at beta."""
    return _info(method, _stack(method, data), _coef(beta), observed=True)


def _solve_step(info: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        if np.linalg.cond(info) < 1.0 / np.finfo(float).eps:
            return np.linalg.solve(info, grad)
    except np.linalg.LinAlgError:
        pass
    damping = max(1e-8 * float(np.trace(info)) / info.shape[0], 1e-8)
    logger.debug(f"Information matrix singular, ridge-damped step with lambda={damping:.3g}")
    return np.linalg.solve(info + damping * np.eye(info.shape[0]), grad)


def _penalty_mask(k: int) -> np.ndarray:
    mask = np.ones(k)
    mask[0] = 0.0
    return mask


def fit(method: MethodKind, data: ObservedData, config: SolverConfig | None = None) -> PropensityFit:
    """Fisher scoring with step halving from beta = 0.

    Convergence needs a small scaled score and a negligible Newton step. A small score
    with a large step, or fitted probabilities pinned at 0 or 1, is logistic separation:
    the fit is returned with ``converged=False`` and ``separated=True``.
    """
    if method is MethodKind.ALP:
        raise InputError("ALP is a two-step estimator, use alp_two_step")
    config = config or SolverConfig()
    st = _stack(method, data)
    k = st.X.shape[1]
    n_rows = st.X.shape[0]
    mask = _penalty_mask(k) * config.ridge

    def objective(beta: np.ndarray) -> float:
        value = float(np.sum(_loglik_terms(method, st, beta)))
        return value - 0.5 * float(np.sum(mask * beta**2))

    beta = np.zeros(k)
    current = objective(beta)
    if not np.isfinite(current):
        raise NumericError(f"{method.value} log-likelihood is not finite at the starting point")
    loglik_path = [current]
    norm_path = [0.0]
    converged = False
    separated = False
    iterations = 0

    def newton_step(beta: np.ndarray) -> tuple[np.ndarray, bool, bool]:
        grad = _score(method, st, beta) - mask * beta
        step = _solve_step(_info(method, st, beta) + np.diag(mask), grad)
        score_ok = np.max(np.abs(grad)) / n_rows <= config.tol_score
        small_step = np.max(np.abs(step)) <= STEP_TOL * (1.0 + np.max(np.abs(beta)))
        return step, bool(score_ok), bool(score_ok and small_step)

    for _ in range(config.max_iter):
        step, score_ok, done = newton_step(beta)
        if done:
            converged = True
            break

        t = 1.0
        accepted = False
        for _ in range(config.max_halvings + 1):
            candidate = beta + t * step
            value = objective(candidate)
            if np.isfinite(value) and value >= current:
                accepted = True
                break
            t /= 2.0
        if not accepted:
            logger.debug(f"{method.value}: no ascent after {config.max_halvings} halvings")
            break

        beta, current = candidate, value
        iterations += 1
        loglik_path.append(current)
        norm_path.append(float(np.linalg.norm(beta)))
        if score_ok and np.max(np.abs(step)) > SEPARATION_STEP:
            separated = True
        if np.max(np.abs(st.X @ beta)) >= SATURATION_ETA:
            separated = True
    else:
        # budget spent; the final iterate is still checked
        if not separated:
            converged = newton_step(beta)[2]

    grad = _score(method, st, beta) - mask * beta
    score_norm = float(np.max(np.abs(grad)) / n_rows)
    if separated:
        converged = False
        logger.warning(f"{method.value}: samples look separated, estimates diverge (|beta|={norm_path[-1]:.3g})")
    elif not converged:
        logger.warning(f"{method.value}: no convergence after {iterations} iterations (score {score_norm:.3g})")

    pi_c_hat = link_eval(data.conv_design @ beta, 1.0).pi_c
    return PropensityFit(
        method=method,
        beta_hat=PropensityParams(beta=beta),
        pi_c_hat_conv=pi_c_hat,
        converged=converged,
        iterations=iterations,
        score_norm=score_norm,
        loglik=float(np.sum(_loglik_terms(method, st, beta))),
        info_matrix=_info(method, st, beta),
        separated=separated,
        loglik_path=tuple(loglik_path),
        beta_norm_path=tuple(norm_path),
    )


def alp_two_step(data: ObservedData, config: SolverConfig | None = None) -> PropensityFit:
    """Weighted logistic regression for pi_delta, then pi_c = pi_delta / (1 - pi_delta).

    The second step is left unclamped, so estimated participation probabilities may exceed 1;
    such rows are counted in ``n_pi_c_above_one``.
    """
    config = config or SolverConfig()
    st = _stack(MethodKind.ALP, data)
    separated = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = sm.GLM(st.is_conv, st.X, family=sm.families.Binomial(), freq_weights=st.weight).fit(
                maxiter=config.max_iter,
                tol=config.tol_score,
            )
        except PerfectSeparationError as e:
            raise NumericError("ALP first step failed: convenience and reference samples are separated") from e
    if any(issubclass(w.category, PerfectSeparationWarning) for w in caught):
        separated = True

    gamma = np.asarray(result.params, dtype=np.float64)
    if not np.all(np.isfinite(gamma)):
        raise NumericError("ALP first step produced non-finite coefficients")
    converged = bool(getattr(result, "converged", False)) and not separated
    if separated:
        logger.warning("ALP: first-step logistic fit reports separation, pi_c estimates are unreliable")
    history = getattr(result, "fit_history", None) or {}
    iterations = int(history.get("iteration", 0))

    eta = np.clip(st.X @ gamma, -ETA_BOUND, ETA_BOUND)
    pi_delta = _clip(expit(eta))
    resid = st.weight * (st.is_conv - pi_delta)
    info = (st.X * (st.weight * pi_delta * (1.0 - pi_delta))[:, None]).T @ st.X
    ll_terms = st.weight * np.where(st.is_conv > 0, np.log(pi_delta), np.log1p(-pi_delta))

    delta_conv = pi_delta[: st.n_c]
    pinned = int(np.sum(delta_conv >= 1.0 - PROB_FLOOR))
    if pinned:
        logger.warning(f"ALP: {pinned} convenience rows with pi_delta at the upper clamp")
    pi_c_hat = delta_conv / (1.0 - delta_conv)
    above = int(np.sum(pi_c_hat > 1.0))
    if above:
        logger.info(f"ALP: {above} of {st.n_c} convenience units with estimated pi_c > 1")

    return PropensityFit(
        method=MethodKind.ALP,
        beta_hat=PropensityParams(beta=gamma),
        pi_c_hat_conv=pi_c_hat,
        converged=converged,
        iterations=iterations,
        score_norm=float(np.max(np.abs(st.X.T @ resid)) / st.X.shape[0]),
        loglik=float(np.sum(ll_terms)),
        info_matrix=(info + info.T) / 2,
        separated=separated,
        n_pi_c_above_one=above,
    )


def fit_method(method: MethodKind, data: ObservedData, config: SolverConfig | None = None) -> PropensityFit:
    """Fit any of the four estimators."""
    if method is MethodKind.ALP:
        return alp_two_step(data, config)
    return fit(method, data, config)


def predict_pi_c(fit_result: PropensityFit, x: np.ndarray) -> np.ndarray:
    """Estimated participation probabilities for arbitrary covariate rows."""
    eta = np.clip(design_matrix(x) @ fit_result.beta, -ETA_BOUND, ETA_BOUND)
    if fit_result.method is MethodKind.ALP:
        pi_delta = _clip(expit(eta))
        return pi_delta / (1.0 - pi_delta)
    return _clip(expit(eta))
