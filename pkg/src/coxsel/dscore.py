"""Orthogonalized exposure score for inference after variable selection.

The exposure score of a proportional hazards model is decorrelated from the
covariate directions by subtracting a linear combination (gamma) of covariate
Schoenfeld residuals.  A ScoreContext caches, at a fixed evaluation point
(alpha, beta), the per-event-time risk-set functionals everything else needs:
baseline hazard increments, weighted risk-set means of the exposure and the
covariates, and their cumulative integrals against the baseline measure.

All integrals against the baseline measure are sums over event-time atoms.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import build_risk_index
from .exceptions import DegenerateInformationError, NoEventsError, ValidationError
from .lasso import weighted_linear_lasso

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreContext:
    """Risk-set functionals of one dataset at a fixed (alpha, beta).

    ``weights`` holds exp(eta - shift) with ``shift`` the max linear predictor,
    and ``lam0`` the baseline increments on the same shifted scale, so products
    weights[i] * lam0[k] equal their unshifted counterparts exactly.  Per-event
    arrays are indexed by distinct event time; ``n_le[i]`` counts distinct
    event times at or before subject i's follow-up time.
    """

    data: object
    index: object
    alpha: float
    beta: np.ndarray
    shift: float
    weights: np.ndarray        # (n,) original row order
    lam0: np.ndarray           # (K,) shifted baseline increments
    abar: np.ndarray           # (K,) risk-set weighted mean exposure
    lbar: np.ndarray           # (K, p) risk-set weighted mean covariates
    var_a: np.ndarray          # (K,) risk-set weighted exposure variance
    cov_la: np.ndarray         # (K, p) risk-set weighted covariance of L with A
    cum_lam: np.ndarray        # (K,) cumulative lam0
    cum_abar_lam: np.ndarray   # (K,) cumulative abar * lam0
    cum_lbar_lam: np.ndarray   # (K, p) cumulative lbar * lam0
    n_le: np.ndarray           # (n,) original row order
    event_y: np.ndarray        # (m,) exposure Schoenfeld residuals, event rows
    event_x: np.ndarray        # (m, p) covariate Schoenfeld residuals

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.data.p

    def baseline_increments(self):
        """Baseline hazard increments on the natural (unshifted) scale."""
        return self.lam0 * math.exp(-self.shift)


def _suffix(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def build_score_context(data, index, alpha, beta):
    """Cache per-event-time risk-set functionals at evaluation point
    (alpha, beta); beta is a full-length covariate vector."""
    if index is None:
        index = build_risk_index(data)
    if index.n_events == 0:
        raise NoEventsError("no events at or before tau")
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != data.p:
        raise ValidationError("beta length must match covariate count")
    alpha = float(alpha)
    a = data.exposure
    lmat = data.covariates
    eta = alpha * a + lmat @ beta
    shift = float(eta.max())
    w = np.exp(eta - shift)
    order = index.order
    w_s = w[order]
    a_s = a[order]
    l_s = lmat[order]
    starts = index.event_start
    s0 = _suffix(w_s)[starts]
    swa = _suffix(w_s * a_s)[starts]
    swaa = _suffix(w_s * a_s * a_s)[starts]
    swl = _suffix(w_s[:, None] * l_s)[starts]
    swla = _suffix((w_s * a_s)[:, None] * l_s)[starts]
    d = index.event_count.astype(np.float64)
    abar = swa / s0
    lbar = swl / s0[:, None]
    var_a = swaa / s0 - abar * abar
    cov_la = swla / s0[:, None] - lbar * abar[:, None]
    lam0 = d / s0
    n_le = np.empty(data.n, dtype=np.int64)
    n_le[order] = index.nevt_le
    evr = index.event_rows
    evk = index.event_time_idx
    return ScoreContext(
        data=data, index=index, alpha=alpha, beta=beta, shift=shift,
        weights=w, lam0=lam0, abar=abar, lbar=lbar, var_a=var_a, cov_la=cov_la,
        cum_lam=np.cumsum(lam0),
        cum_abar_lam=np.cumsum(abar * lam0),
        cum_lbar_lam=np.cumsum(lbar * lam0[:, None], axis=0),
        n_le=n_le,
        event_y=a[evr] - abar[evk],
        event_x=lmat[evr] - lbar[evk],
    )


def _check_gamma(context, gamma):
    gamma = np.asarray(gamma, dtype=np.float64).ravel()
    if gamma.shape[0] != context.p:
        raise ValidationError("gamma length must match covariate count")
    return gamma


def u_hat(context, gamma):
    """Per-subject orthogonalized score values and their mean.

    Each value is the event-time residual A - abar - gamma'(L - lbar) minus
    the subject's cumulative compensator against the baseline measure.
    """
    gamma = _check_gamma(context, gamma)
    data = context.data
    ai = data.exposure - data.covariates @ gamma
    m = context.abar - context.lbar @ gamma
    cum_m_lam = context.cum_abar_lam - context.cum_lbar_lam @ gamma
    ke = context.n_le
    cl = np.concatenate((np.zeros(1), context.cum_lam))[ke]
    cm = np.concatenate((np.zeros(1), cum_m_lam))[ke]
    u = -context.weights * (ai * cl - cm)
    evr = context.index.event_rows
    u[evr] += ai[evr] - m[context.index.event_time_idx]
    return u, float(u.mean())


@dataclass(frozen=True)
class GammaEstimate:
    gamma: np.ndarray
    support: tuple
    constrained_to: tuple = None


def estimate_gamma_lasso(context, lambda_gamma):
    """l1-penalized regression of the exposure Schoenfeld residuals on the
    covariate Schoenfeld residuals over event rows; the returned coefficients
    satisfy the subgradient conditions of that event-level problem."""
    if context.event_y.shape[0] == 0:
        raise NoEventsError("no event rows")
    if context.p == 0:
        return GammaEstimate(gamma=np.zeros(0), support=())
    fit = weighted_linear_lasso(context.event_y, context.event_x, lambda_gamma)
    return GammaEstimate(gamma=fit.coef, support=fit.active)


def constrained_gamma(context, support_b):
    """Least squares of the exposure residuals on the covariate residuals
    restricted to columns in support_b; zero elsewhere.  Rank deficiency
    falls back to the minimum-norm solution with a logged diagnostic."""
    support_b = tuple(sorted({int(j) for j in support_b}))
    if any(j < 0 or j >= context.p for j in support_b):
        raise ValidationError("constraint indices out of range")
    gamma = np.zeros(context.p)
    if support_b:
        xb = context.event_x[:, support_b]
        sol, _, rank, _ = np.linalg.lstsq(xb, context.event_y, rcond=None)
        if rank < len(support_b):
            log.warning(
                "restricted residual regression is rank deficient (%d < %d); "
                "using the minimum-norm solution", rank, len(support_b),
            )
        gamma[list(support_b)] = sol
    return GammaEstimate(
        gamma=gamma,
        support=tuple(int(j) for j in np.flatnonzero(gamma)),
        constrained_to=support_b,
    )


def theorem1_variance(context, gamma_check):
    """Plug-in asymptotic variance of the orthogonalized-score estimator:
    sigma2 = mean(u_i^2) / v^2 with v the mean derivative scale.  The robust
    standard error of the estimate is sqrt(sigma2 / n)."""
    gamma = _check_gamma(context, gamma_check)
    d = context.index.event_count.astype(np.float64)
    v_hat = float(d @ (context.var_a - context.cov_la @ gamma)) / context.n
    if abs(v_hat) <= 1e-12:
        raise DegenerateInformationError("degenerate information")
    u, _ = u_hat(context, gamma)
    sigma2 = float(np.mean(u * u)) / (v_hat * v_hat)
    return sigma2, v_hat


@dataclass(frozen=True)
class DecorrelatedInference:
    """Estimate, variance pieces, and sparsity diagnostics for one
    orthogonalized-score analysis."""

    alpha_check: float
    sigma2_hat: float
    v_hat: float
    score_at_solution: float
    s_beta: int
    s_gamma: int
    s_eta: int
    n: int

    @property
    def se(self):
        return math.sqrt(self.sigma2_hat / self.n)


def fang_one_step(lasso_alpha, lasso_beta, lasso_gamma, context):
    """One-step corrected estimate from initial l1-penalized estimates:
    alpha + mean(u) / v, where -v is the analytic derivative of the mean
    score in alpha.  Variance is the same plug-in form evaluated at the
    initial estimates."""
    lasso_alpha = float(lasso_alpha)
    lasso_beta = np.asarray(lasso_beta, dtype=np.float64).ravel()
    gamma = np.asarray(lasso_gamma, dtype=np.float64).ravel()
    if context.alpha != lasso_alpha or not np.array_equal(context.beta, lasso_beta):
        context = build_score_context(
            context.data, context.index, lasso_alpha, lasso_beta
        )
    gamma = _check_gamma(context, gamma)
    sigma2, v_hat = theorem1_variance(context, gamma)
    _, umean = u_hat(context, gamma)
    return DecorrelatedInference(
        alpha_check=lasso_alpha + umean / v_hat,
        sigma2_hat=sigma2,
        v_hat=v_hat,
        score_at_solution=umean,
        s_beta=int(np.count_nonzero(lasso_beta)),
        s_gamma=int(np.count_nonzero(gamma)),
        s_eta=0,
        n=context.n,
    )
