"""Unpenalized Cox partial-likelihood machinery.

Log partial likelihood, score, information, Newton fitting with step-halving,
Breslow baseline increments, Schoenfeld and martingale residuals, and the
robust sandwich variance.  Ties follow the Breslow convention throughout.

Sign convention: ``partial_loglik`` is the sum-form log partial likelihood and
``partial_score`` is its gradient, so the exposure component equals the sum of
exposure Schoenfeld residuals over events.  Estimating-equation forms that
carry a leading minus are obtained by negation downstream.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import (
    MonotoneLikelihoodError,
    SingularInformationError,
    ValidationError,
)


def _suffix_sum(a):
    # cumulative sum from the end; a may be (n,) or (n, c)
    return np.cumsum(a[::-1], axis=0)[::-1]


def _design(data, columns):
    cols = list(columns)
    if cols:
        return np.column_stack([data.exposure, data.covariates[:, cols]])
    return data.exposure.reshape(-1, 1)


def _linear_predictor(data, alpha, beta):
    eta = alpha * data.exposure
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size:
        if beta.size != data.p:
            raise ValidationError("beta must have one entry per covariate column")
        eta = eta + data.covariates @ beta
    return eta


def _loglik_sorted(eta_s, evt_rows_ll, index):
    emax = eta_s.max()
    w = np.exp(eta_s - emax)
    s0 = _suffix_sum(w)[index.event_start]
    d = index.event_count.astype(np.float64)
    return float(evt_rows_ll - np.sum(d * (np.log(s0) + emax)))


def _risk_stats(data, index, eta, mat, second_order=False):
    """Risk-set moments at each distinct event time.

    Returns (s0_shift, emax, xbar, s2bar) where xbar[k] is the weighted
    risk-set mean of ``mat`` columns at the k-th event time and s2bar[k] the
    weighted mean of outer products (only when second_order).
    """
    order = index.order
    eta_s = eta[order]
    emax = eta_s.max()
    w = np.exp(eta_s - emax)
    s0 = _suffix_sum(w)[index.event_start]
    xbar = None
    s2bar = None
    if mat is not None:
        mat_s = mat[order]
        sx = _suffix_sum(w[:, None] * mat_s)[index.event_start]
        xbar = sx / s0[:, None]
        if second_order:
            wxx = w[:, None, None] * mat_s[:, :, None] * mat_s[:, None, :]
            s2 = _suffix_sum(wxx)[index.event_start]
            s2bar = s2 / s0[:, None, None]
    return s0, emax, xbar, s2bar


def partial_loglik(data, index, alpha, beta):
    """Sum over events of eta_i - log(sum of e^eta over the risk set)."""
    eta = _linear_predictor(data, alpha, beta)
    ev_part = float(eta[index.event_rows].sum())
    return _loglik_sorted(eta[index.order], ev_part, index)


def partial_score(data, index, alpha, beta, columns=()):
    """Gradient of partial_loglik over (alpha, beta[columns]).

    Equals the per-coordinate sums of Schoenfeld residuals over events.
    """
    eta = _linear_predictor(data, alpha, beta)
    x = _design(data, columns)
    _, _, xbar, _ = _risk_stats(data, index, eta, x)
    d = index.event_count.astype(np.float64)
    return x[index.event_rows].sum(axis=0) - d @ xbar


def partial_information(data, index, alpha, beta, columns=()):
    """Observed information (negative Hessian of partial_loglik) over
    (alpha, beta[columns])."""
    eta = _linear_predictor(data, alpha, beta)
    x = _design(data, columns)
    _, _, xbar, s2bar = _risk_stats(data, index, eta, x, second_order=True)
    d = index.event_count.astype(np.float64)
    outer = xbar[:, :, None] * xbar[:, None, :]
    return np.tensordot(d, s2bar - outer, axes=1)


def breslow_baseline(data, index, alpha, beta):
    """Baseline hazard mass at each distinct event time: d_k / sum of e^eta
    over the risk set.  Returns an (m, 2) array of (time, increment)."""
    eta = _linear_predictor(data, alpha, beta)
    s0, emax, _, _ = _risk_stats(data, index, eta, None)
    d = index.event_count.astype(np.float64)
    inc = d * np.exp(-np.log(s0) - emax)
    return np.column_stack([index.event_times, inc])


@dataclass(frozen=True)
class ResidualSet:
    """Schoenfeld residuals per event (exposure and all covariate columns) and
    per-subject martingale residuals."""

    schoenfeld_a: np.ndarray
    schoenfeld_l: np.ndarray
    martingale: np.ndarray
    event_rows: np.ndarray


def _residuals_at(data, index, alpha, beta):
    eta = _linear_predictor(data, alpha, beta)
    full = np.column_stack([data.exposure, data.covariates])
    s0, emax, xbar, _ = _risk_stats(data, index, eta, full)
    resid = full[index.event_rows] - xbar[index.event_time_idx]
    # martingale part: event indicator minus e^eta * cumulative baseline
    d = index.event_count.astype(np.float64)
    cum1 = np.cumsum(d / s0)
    w = np.exp(eta - (eta[index.order]).max())
    lam = np.zeros(data.n)
    hit = index.nevt_le > 0
    lam_sorted = np.zeros(data.n)
    lam_sorted[hit] = cum1[index.nevt_le[hit] - 1]
    lam[index.order] = lam_sorted
    mart = data.truncated_status() - w * lam
    return resid, mart


def schoenfeld_residuals(data, index, fit):
    """Residuals at the fitted (alpha_hat, beta_hat); covariate residuals are
    produced for every column, not only the fitted subset."""
    resid, mart = _residuals_at(data, index, fit.alpha_hat, fit.beta_hat)
    return ResidualSet(
        schoenfeld_a=resid[:, 0],
        schoenfeld_l=resid[:, 1:],
        martingale=mart,
        event_rows=index.event_rows,
    )


@dataclass(frozen=True)
class CoxFit:
    alpha_hat: float
    beta_hat: np.ndarray
    columns: tuple
    loglik: float
    baseline: np.ndarray
    naive_vcov: np.ndarray
    robust_vcov: np.ndarray
    converged: bool
    iterations: int
    n_events: int

    @property
    def se_alpha_robust(self):
        return math.sqrt(self.robust_vcov[0, 0])

    @property
    def se_alpha_naive(self):
        return math.sqrt(self.naive_vcov[0, 0])


def _score_contributions(data, index, eta, x):
    """Per-subject score contributions in martingale-integral form.

    s_i = delta_i * (x_i - xbar(u_i)) - e^{eta_i} * integral of (x_i - xbar(t))
    against the baseline mass up to u_i.  Rows sum to the score.
    """
    s0, emax, xbar, _ = _risk_stats(data, index, eta, x)
    d = index.event_count.astype(np.float64)
    lam = d / s0  # shifted scale; cancels against the shifted weights below
    cum1 = np.cumsum(lam)
    cumx = np.cumsum(xbar * lam[:, None], axis=0)
    eta_s = eta[index.order]
    w = np.exp(eta - eta_s.max())
    n = data.n
    lam_u = np.zeros(n)
    cumx_u = np.zeros((n, x.shape[1]))
    hit = index.nevt_le > 0
    tmp = np.zeros(n)
    tmp[hit] = cum1[index.nevt_le[hit] - 1]
    lam_u[index.order] = tmp
    tmpx = np.zeros((n, x.shape[1]))
    tmpx[hit] = cumx[index.nevt_le[hit] - 1]
    cumx_u[index.order] = tmpx
    s = -w[:, None] * (x * lam_u[:, None] - cumx_u)
    rows = index.event_rows
    s[rows] += x[rows] - xbar[index.event_time_idx]
    return s


def _sandwich(data, index, alpha, beta, columns):
    x = _design(data, columns)
    eta = _linear_predictor(data, alpha, beta)
    s = _score_contributions(data, index, eta, x)
    info = partial_information(data, index, alpha, beta, columns)
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("singular information in sandwich") from None
    return inv @ (s.T @ s) @ inv


def robust_variance(data, index, fit):
    """Sandwich I^{-1} (sum of s_i s_i') I^{-1} over (alpha, fitted columns)."""
    return _sandwich(data, index, fit.alpha_hat, fit.beta_hat, fit.columns)


def fit_cox(data, index, columns=(), tol=1e-9, max_iter=100, max_halvings=30):
    """Newton-Raphson fit of the Cox model on exposure + the given covariate
    columns, with step-halving; converged means score max-norm <= tol."""
    cols = tuple(dict.fromkeys(int(c) for c in columns))
    for c in cols:
        if not 0 <= c < data.p:
            raise ValidationError(f"covariate index {c} out of range")
    q = len(cols)
    if q + 1 >= index.n_events:
        raise SingularInformationError(
            f"{q + 1} parameters with only {index.n_events} events"
        )
    x = _design(data, cols)
    sds = x.std(axis=0)
    names = ["exposure"] + [data.names[c] for c in cols]
    theta = np.zeros(q + 1)
    ev_rows = index.event_rows
    order = index.order

    def loglik_at(th):
        eta = x @ th
        return _loglik_sorted(eta[order], float(eta[ev_rows].sum()), index)

    ll = loglik_at(theta)
    converged = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        eta = x @ theta
        _, _, xbar, s2bar = _risk_stats(data, index, eta, x, second_order=True)
        d = index.event_count.astype(np.float64)
        score = x[ev_rows].sum(axis=0) - d @ xbar
        if np.max(np.abs(score)) <= tol:
            converged = True
            break
        info = np.tensordot(d, s2bar - xbar[:, :, None] * xbar[:, None, :], axes=1)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformationError("singular information matrix") from None
        scale = 1.0
        for _h in range(max_halvings):
            cand = theta + scale * step
            cand_ll = loglik_at(cand)
            if cand_ll >= ll - 1e-10 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        theta = theta + scale * step
        ll = cand_ll
        drift = np.abs(theta) * sds
        if np.any(drift > 50.0):
            j = int(np.argmax(drift))
            raise MonotoneLikelihoodError(
                f"coefficient for {names[j]} diverging (monotone likelihood)"
            )

    alpha_hat = float(theta[0])
    beta_hat = np.zeros(data.p)
    if q:
        beta_hat[list(cols)] = theta[1:]
    info = partial_information(data, index, alpha_hat, beta_hat, cols)
    try:
        naive = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("singular information at the optimum") from None
    return CoxFit(
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        columns=cols,
        loglik=ll,
        baseline=breslow_baseline(data, index, alpha_hat, beta_hat),
        naive_vcov=naive,
        robust_vcov=_sandwich(data, index, alpha_hat, beta_hat, cols),
        converged=converged,
        iterations=iterations,
        n_events=int(index.n_events),
    )


@dataclass(frozen=True)
class WaldResult:
    z: float
    p_value: float
    ci_low: float
    ci_high: float
    level: float


def wald_test(estimate, se, null_value=0.0, level=0.05):
    """Two-sided Wald test and CI from a normal reference."""
    if not se > 0:
        raise ValidationError("standard error must be positive")
    z = (estimate - null_value) / se
    p = 2.0 * float(norm.sf(abs(z)))
    crit = float(norm.ppf(1.0 - level / 2.0))
    return WaldResult(
        z=float(z),
        p_value=min(p, 1.0),
        ci_low=float(estimate - crit * se),
        ci_high=float(estimate + crit * se),
        level=level,
    )
