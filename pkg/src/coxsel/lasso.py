"""l1-penalized estimation for gaussian, binomial, and Cox partial-likelihood
losses: single fits, warm-started regularization paths, and k-fold
cross-validation with the min / one-standard-error rules.

All losses are averaged over observations, so the objectives are

    gaussian:  (1/2n) sum_i w_i (y_i - b0 - x_i'c)^2        + lam * sum_j pen_j |c_j|
    binomial:  -(1/n) sum_i w_i [y_i eta_i - log(1+e^eta_i)] + lam * ...
    cox:       (1/n) * negative log partial likelihood       + lam * ...

Designs are standardized internally by default (centered when an intercept is
fitted, scale-only otherwise) and coefficients are returned on the original
scale.  KKT conditions are verified on the solver's standardized scale before
any fit is returned.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels as K
from .data import SurvivalDataset, build_risk_index, standardize_matrix
from .exceptions import (
    ConvergenceError,
    FoldingError,
    NoEventsError,
    ValidationError,
)

log = logging.getLogger(__name__)

CD_TOL = 1e-8
KKT_TARGET = 5e-7
SWEEP_BUDGET = 10_000
MAX_OUTER = 100
MIN_PRQ = 1e-5


@dataclass
class LassoProblem:
    """A penalized regression problem; build via the gaussian / binomial / cox
    constructors."""

    kind: str
    x: np.ndarray
    y: np.ndarray = None
    weights: np.ndarray = None
    penalty: np.ndarray = None
    intercept: bool = False
    standardize: bool = True
    data: SurvivalDataset = None
    index: object = None

    @classmethod
    def gaussian(cls, x, y, weights=None, penalty=None, intercept=True, standardize=True):
        return cls._plain("gaussian", x, y, weights, penalty, intercept, standardize)

    @classmethod
    def binomial(cls, x, y, weights=None, penalty=None, intercept=True, standardize=True):
        prob = cls._plain("binomial", x, y, weights, penalty, intercept, standardize)
        if not np.all((prob.y == 0.0) | (prob.y == 1.0)):
            raise ValidationError("binomial responses must be 0/1")
        return prob

    @classmethod
    def cox(cls, data, index=None, x=None, penalty=None, standardize=True):
        """Cox partial-likelihood loss; ``x`` defaults to [exposure, covariates]
        aligned with the dataset rows.  No intercept; weights unsupported."""
        if index is None:
            index = build_risk_index(data)
        if x is None:
            x = np.column_stack([data.exposure, data.covariates])
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != data.n:
            raise ValidationError("design rows must match dataset rows")
        pen = _penalty_vector(penalty, x.shape[1])
        return cls(
            kind="cox", x=x, penalty=pen, intercept=False,
            standardize=standardize, data=data, index=index,
        )

    @classmethod
    def _plain(cls, kind, x, y, weights, penalty, intercept, standardize):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValidationError("design must be 2-d")
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != x.shape[0]:
            raise ValidationError("response length must match design rows")
        if x.shape[0] == 0:
            raise NoEventsError("no observations")
        if weights is None:
            w = np.ones(x.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64).ravel()
            if w.shape[0] != x.shape[0] or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValidationError("weights must be nonnegative, finite, aligned")
            if w.sum() <= 0:
                raise ValidationError("weights sum to zero")
        return cls(
            kind=kind, x=x, y=y, weights=w,
            penalty=_penalty_vector(penalty, x.shape[1]),
            intercept=intercept, standardize=standardize,
        )

    @property
    def n_obs(self):
        return self.x.shape[0]

    @property
    def n_cols(self):
        return self.x.shape[1]

    def subset(self, rows):
        """Row-restricted copy (fresh standardization happens at fit time)."""
        rows = np.asarray(rows)
        if self.kind == "cox":
            d = self.data
            sub = SurvivalDataset(
                d.time[rows], d.status[rows], d.exposure[rows],
                d.covariates[rows], tau=d.tau, names=d.names,
            )
            return LassoProblem.cox(
                sub, x=self.x[rows], penalty=self.penalty, standardize=self.standardize
            )
        return LassoProblem(
            kind=self.kind, x=self.x[rows], y=self.y[rows],
            weights=self.weights[rows], penalty=self.penalty,
            intercept=self.intercept, standardize=self.standardize,
        )


def _penalty_vector(penalty, q):
    if penalty is None:
        pen = np.ones(q)
    else:
        pen = np.asarray(penalty, dtype=np.float64).ravel()
        if pen.shape[0] != q:
            raise ValidationError("penalty length must match design columns")
        if np.any(pen < 0):
            raise ValidationError("penalty weights must be nonnegative")
    return pen


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    sweeps: int
    kkt: float

    @property
    def active(self):
        return tuple(int(j) for j in np.flatnonzero(self.coef))


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    coefs: np.ndarray          # (n_lambda, q) on the original scale
    intercepts: np.ndarray
    active_sizes: np.ndarray
    sweeps: np.ndarray
    kkt: np.ndarray
    monotone_violations: int


@dataclass(frozen=True)
class CvResult:
    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    lambda_min: float
    lambda_1se: float
    index_min: int
    index_1se: int
    seed: int
    fold_of: np.ndarray


class _Solver:
    """Prepared state for one problem: standardized design, sorted-scale
    structures for the Cox loss, and a proximal Newton loop (exact Hessian of
    the loss on the standardized scale, coordinate descent on the penalized
    quadratic model).  Internal coefficients live on the standardized scale;
    slot 0 is the intercept when one is fitted."""

    def __init__(self, problem):
        self.problem = problem
        x = problem.x
        if problem.standardize:
            xs, info = standardize_matrix(x, center=problem.intercept)
            self.means = info.means
            self.scales = info.scales
        else:
            xs = np.asarray(x, dtype=np.float64)
            self.means = np.zeros(x.shape[1])
            self.scales = np.ones(x.shape[1])
        self.n = x.shape[0]
        self.q = x.shape[1]
        kind = problem.kind
        if kind == "cox":
            idx = problem.index
            order = idx.order
            self.x_int = np.ascontiguousarray(xs[order])
            self.evt_s = problem.data.truncated_status()[order].astype(np.float64)
            self.tie_start = idx.event_start
            self.tie_count = idx.event_count
            self.nevt_le = idx.nevt_le
            self.pen = problem.penalty.copy()
            self.off = 0
        else:
            cols = [xs]
            self.off = 1 if problem.intercept else 0
            if problem.intercept:
                cols.insert(0, np.ones((self.n, 1)))
            self.x_int = np.ascontiguousarray(np.hstack(cols))
            self.y = problem.y
            self.w = problem.weights
            self.pen = np.concatenate([np.zeros(self.off), problem.penalty])
        self.xt = np.ascontiguousarray(self.x_int.T)
        self.live = (self.xt * self.xt).sum(axis=1) > 0.0
        self.kind = kind
        self.hess = None
        self.hdiag = None
        self.h_eta = None
        if kind == "gaussian":
            self._set_hessian((self.xt * (self.w / self.n)) @ self.x_int)

    # --- quadratic model at the current linear predictor -------------------

    def _set_hessian(self, h):
        self.hess = np.ascontiguousarray(h)
        self.hdiag = np.ascontiguousarray(np.diag(h))

    def _gobs(self, eta):
        """Per-observation gradient parts; the full gradient is xt @ gobs."""
        if self.kind == "gaussian":
            return self.w * (eta - self.y) / self.n
        if self.kind == "binomial":
            return self.w * (expit(eta) - self.y) / self.n
        return K.cox_irls(
            eta, self.evt_s, self.tie_start, self.tie_count, self.nevt_le
        )[1]

    def _refresh_hessian(self, eta):
        if self.kind == "gaussian":
            return  # constant, set at construction
        if self.kind == "binomial":
            pr = expit(eta)
            v = self.w * np.maximum(pr * (1.0 - pr), MIN_PRQ) / self.n
            self._set_hessian((self.xt * v) @ self.x_int)
        else:
            emax = eta.max()
            w = np.exp(eta - emax)
            s0 = np.cumsum(w[::-1])[::-1][self.tie_start]
            d = self.tie_count.astype(np.float64)
            cum1 = np.concatenate((np.zeros(1), np.cumsum(d / s0)))[self.nevt_le]
            h1 = self.xt @ (self.x_int * (w * cum1)[:, None])
            sx = np.cumsum((w[:, None] * self.x_int)[::-1], axis=0)[::-1][self.tie_start]
            p = sx * (np.sqrt(d) / s0)[:, None]
            self._set_hessian((h1 - p.T @ p) / self.n)
        self.h_eta = eta.copy()

    def _kkt(self, grad, coef, lam):
        t = lam * self.pen
        penalized = self.pen > 0.0
        zero = coef == 0.0
        viol = 0.0
        m = penalized & zero
        if m.any():
            viol = max(viol, float((np.abs(grad[m]) - t[m]).max()))
        m = penalized & ~zero
        if m.any():
            viol = max(viol, float(np.abs(grad[m] + t[m] * np.sign(coef[m])).max()))
        m = ~penalized & self.live  # unpenalized coordinates must be stationary
        if m.any():
            viol = max(viol, float(np.abs(grad[m]).max()))
        return max(viol, 0.0)

    def solve(self, lam, coef0=None, budget=SWEEP_BUDGET):
        """Fit at one lambda; returns (coef_internal, sweeps, kkt, grad)."""
        m = self.q + self.off
        coef = np.zeros(m) if coef0 is None else np.asarray(coef0, dtype=np.float64).copy()
        eta = self.x_int @ coef
        used = 0
        tol = CD_TOL
        for outer in range(MAX_OUTER):
            grad = self.xt @ self._gobs(eta)
            kkt = self._kkt(grad, coef, lam)
            if kkt <= KKT_TARGET:
                return coef, used, kkt, grad
            if used >= budget:
                raise ConvergenceError(
                    "coordinate descent exhausted its sweep budget",
                    diagnostics={"lam": lam, "sweeps": used, "kkt": kkt},
                )
            # a Hessian carried over from a nearby warm start is good enough
            # for the first pass; refresh once the predictor has moved
            if self.hess is None or (
                self.kind != "gaussian"
                and (outer > 0 or float(np.max(np.abs(eta - self.h_eta))) > 0.05)
            ):
                self._refresh_hessian(eta)
            used += self._descend(lam, coef, -grad, budget - used, tol)
            eta = self.x_int @ coef
            if not np.all(np.isfinite(coef)) or np.max(np.abs(coef)) > 1e4:
                raise ConvergenceError(
                    "penalized fit diverging",
                    diagnostics={"lam": lam, "max_coef": float(np.max(np.abs(coef)))},
                )
            if outer >= 2 and outer % 2 == 0:
                tol = max(tol * 0.25, 1e-12)  # tighten if KKT keeps failing
        raise ConvergenceError(
            "proximal Newton did not reach the KKT target",
            diagnostics={"lam": lam, "sweeps": used},
        )

    def _descend(self, lam, coef, g, budget, tol):
        # full sweep, then cheap active-set sweeps, until a full sweep is quiet
        used = 0
        while used < budget:
            s, delta = K.cd_quad(
                g, coef, self.hess, self.hdiag, lam, self.pen, False, 1, tol,
            )
            used += s
            if delta <= tol:
                break
            s, _ = K.cd_quad(
                g, coef, self.hess, self.hdiag, lam, self.pen, True,
                min(budget - used, 1000), tol,
            )
            used += s
        return used

    def run_path(self, grid, coef0=None):
        """Warm-started fits over a descending grid; returns internal-scale
        (coefs, sweeps, kkts).  The Cox loss runs in one compiled pass."""
        m = self.q + self.off
        nl = grid.shape[0]
        coef = np.zeros(m) if coef0 is None else np.asarray(coef0, dtype=np.float64).copy()
        if self.kind == "cox":
            coefs, kkts, sweeps, status, bad = K.cox_path(
                self.x_int, self.xt, self.evt_s, self.tie_start, self.tie_count,
                self.nevt_le, self.pen, self.live, grid, coef,
                KKT_TARGET, CD_TOL, SWEEP_BUDGET, MAX_OUTER,
            )
            if status:
                reasons = {
                    1: "coordinate descent exhausted its sweep budget",
                    2: "proximal Newton did not reach the KKT target",
                    3: "penalized fit diverging",
                }
                raise ConvergenceError(
                    reasons[int(status)], diagnostics={"lam": float(grid[bad])}
                )
            return coefs, sweeps, kkts
        coefs = np.empty((nl, m))
        sweeps = np.empty(nl, dtype=np.int64)
        kkts = np.empty(nl)
        for i, lam in enumerate(grid):
            coef, sw, kk, _ = self.solve(float(lam), coef)
            coefs[i] = coef
            sweeps[i] = sw
            kkts[i] = kk
        return coefs, sweeps, kkts

    # --- scale mapping -----------------------------------------------------

    def to_raw(self, coef_int):
        c = coef_int[self.off:] / self.scales
        b0 = coef_int[0] - float(np.dot(coef_int[self.off:], self.means / self.scales)) \
            if self.off else 0.0
        return c, b0

    def to_internal(self, coef_raw, intercept):
        coef_raw = np.asarray(coef_raw, dtype=np.float64).ravel()
        if coef_raw.shape[0] != self.q:
            raise ValidationError("coefficient length must match design columns")
        c = coef_raw * self.scales
        if self.off:
            b0 = intercept + float(np.dot(coef_raw, self.means))
            return np.concatenate([[b0], c])
        return c

    def gradient(self, coef_int):
        return self.xt @ self._gobs(self.x_int @ coef_int)

    def negll(self, coef_int):
        """Unpenalized loss at internal coefficients, averaged over n."""
        eta = self.x_int @ coef_int
        return self.negll_eta(eta)

    def negll_eta(self, eta):
        if self.kind == "gaussian":
            r = self.y - eta
            return float(np.dot(self.w, r * r)) / (2.0 * self.n)
        if self.kind == "binomial":
            sp = np.logaddexp(0.0, eta)
            return -float(np.dot(self.w, self.y * eta - sp)) / self.n
        return float(
            K.cox_negll(eta, self.evt_s, self.tie_start, self.tie_count)
        )


def lasso_fit(problem, lam, coef0=None, intercept0=0.0):
    """Solve one penalized fit; the result passes the KKT conditions at
    tolerance 1e-6 on the standardized scale (certified before returning)."""
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    sol = _Solver(problem)
    start = sol.to_internal(coef0, intercept0) if coef0 is not None else None
    coef_int, sweeps, kkt, _ = sol.solve(float(lam), start)
    coef, b0 = sol.to_raw(coef_int)
    return LassoFit(coef=coef, intercept=b0, lam=float(lam), sweeps=sweeps, kkt=kkt)


def kkt_residual(problem, lam, coef, intercept=0.0):
    """Max subgradient violation of the penalized objective at (coef,
    intercept), measured on the solver's standardized scale."""
    sol = _Solver(problem)
    ci = sol.to_internal(coef, intercept)
    return sol._kkt(sol.gradient(ci), ci, float(lam))


def objective(problem, lam, coef, intercept=0.0):
    """Penalized objective at raw-scale coefficients (standardized-scale
    penalty, matching what the solver minimizes)."""
    sol = _Solver(problem)
    ci = sol.to_internal(coef, intercept)
    return sol.negll(ci) + float(lam) * float(np.dot(sol.pen, np.abs(ci)))


def _lambda_grid(lam_max, n_lambda, ratio):
    lam_max = max(float(lam_max), 1e-12)
    grid = np.geomspace(lam_max, lam_max * ratio, n_lambda)
    grid[0] = lam_max
    grid[-1] = lam_max * ratio
    return grid


def lasso_path(problem, n_lambda=100, lambda_ratio=None, lambdas=None):
    """Warm-started descending path.  The grid runs from lambda_max (all
    penalized coefficients zero, from the null-model gradient) down to
    lambda_max * ratio; ratio defaults to 0.01 when n > q else 0.05."""
    if n_lambda < 2:
        raise ValidationError("n_lambda must be at least 2")
    sol = _Solver(problem)
    if not np.any(sol.pen > 0):
        raise ValidationError("path needs at least one penalized column")
    coef_int, sweeps0, _, grad = sol.solve(1e300, None)
    if lambdas is None:
        pp = sol.pen > 0
        lam_max = float(np.max(np.abs(grad[pp]) / sol.pen[pp]))
        if lambda_ratio is None:
            lambda_ratio = 0.01 if problem.n_obs > problem.n_cols else 0.05
        grid = _lambda_grid(lam_max, n_lambda, lambda_ratio)
    else:
        grid = np.asarray(lambdas, dtype=np.float64).ravel()
        if np.any(np.diff(grid) > 0):
            raise ValidationError("lambda grid must be descending")
    nl = grid.shape[0]
    ints, sweeps, kkts = sol.run_path(grid, coef_int)
    coefs = np.empty((nl, problem.n_cols))
    b0s = np.empty(nl)
    sizes = np.empty(nl, dtype=np.int64)
    viol = 0
    for i in range(nl):
        coefs[i], b0s[i] = sol.to_raw(ints[i])
        sizes[i] = int(np.count_nonzero(ints[i, sol.off:]))
        if i and sizes[i] < sizes[i - 1]:
            viol += 1
    if viol:
        log.debug("active-set size decreased %d times along the path", viol)
    return LassoPath(
        lambdas=grid, coefs=coefs, intercepts=b0s, active_sizes=sizes,
        sweeps=sweeps, kkt=kkts, monotone_violations=viol,
    )


def _cox_negll_cols(etas_sorted, evt_s, tie_start, tie_count):
    """Average negative log partial likelihood for each column of a sorted
    (n, n_lambda) linear-predictor matrix."""
    n = etas_sorted.shape[0]
    emax = etas_sorted.max(axis=0)
    w = np.exp(etas_sorted - emax)
    s0 = np.cumsum(w[::-1], axis=0)[::-1][tie_start]
    d = tie_count.astype(np.float64)
    return (d @ (np.log(s0) + emax[None, :]) - evt_s @ etas_sorted) / n


def _fold_assignment(n, k, rng):
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    start = 0
    for f in range(k):
        fold_of[perm[start:start + sizes[f]]] = f
        start += sizes[f]
    return fold_of


def _cox_folds_ok(problem, fold_of, k):
    evt = problem.data.truncated_status()
    for f in range(k):
        held = fold_of == f
        if evt[held].sum() < 1 or evt[~held].sum() < 1:
            return False
    return True


def cross_validate(problem, path=None, k=20, seed=0):
    """k-fold CV along a path.  Cox fold loss uses the difference method:
    (full-data loss minus training loss at the training coefficients), per
    held-out event; gaussian and binomial use mean held-out loss."""
    n = problem.n_obs
    if k < 2 or k > n:
        raise ValidationError("need 2 <= k <= n")
    if path is None:
        path = lasso_path(problem)
    rng = np.random.default_rng(seed)
    fold_of = _fold_assignment(n, k, rng)
    if problem.kind == "cox" and not _cox_folds_ok(problem, fold_of, k):
        fold_of = _fold_assignment(n, k, rng)  # one re-draw from the stream
        if not _cox_folds_ok(problem, fold_of, k):
            raise FoldingError("cannot form folds with events on both sides")
    grid = path.lambdas
    nl = grid.shape[0]
    losses = np.empty((k, nl))
    if problem.kind == "cox":
        idx_full = problem.index
        x_full_sorted = problem.x[idx_full.order]
        evt_full = problem.data.truncated_status().astype(np.float64)
        evt_full_sorted = evt_full[idx_full.order]
    for f in range(k):
        held = fold_of == f
        train_rows = np.flatnonzero(~held)
        held_rows = np.flatnonzero(held)
        sub = problem.subset(train_rows)
        sol = _Solver(sub)
        ints, _, _ = sol.run_path(grid)
        raws = np.empty((nl, problem.n_cols))
        b0s = np.empty(nl)
        for i in range(nl):
            raws[i], b0s[i] = sol.to_raw(ints[i])
        if problem.kind == "cox":
            d_held = float(evt_full[held_rows].sum())
            full_nll = _cox_negll_cols(
                x_full_sorted @ raws.T, evt_full_sorted,
                idx_full.event_start, idx_full.event_count,
            ) * problem.n_obs
            train_nll = _cox_negll_cols(
                sub.x[sub.index.order] @ raws.T,
                sub.data.truncated_status()[sub.index.order].astype(np.float64),
                sub.index.event_start, sub.index.event_count,
            ) * sub.n_obs
            losses[f] = (full_nll - train_nll) / d_held
        else:
            eta_held = problem.x[held_rows] @ raws.T + b0s[None, :]
            yh = problem.y[held_rows]
            wh = problem.weights[held_rows]
            nh = held_rows.shape[0]
            if problem.kind == "gaussian":
                r = yh[:, None] - eta_held
                losses[f] = (wh @ (r * r)) / (2.0 * nh)
            else:
                sp = np.logaddexp(0.0, eta_held)
                losses[f] = -(wh @ (yh[:, None] * eta_held - sp)) / nh
    mean = losses.mean(axis=0)
    se = losses.std(axis=0, ddof=1) / np.sqrt(k)
    imin = int(np.argmin(mean))
    cut = mean[imin] + se[imin]
    i1se = int(np.flatnonzero(mean <= cut)[0])  # grid is descending
    return CvResult(
        lambdas=grid, mean_loss=mean, se_loss=se,
        lambda_min=float(grid[imin]), lambda_1se=float(grid[i1se]),
        index_min=imin, index_1se=i1se, seed=seed, fold_of=fold_of,
    )


def weighted_linear_lasso(y, x, lam, weights=None, standardize=True):
    """l1-penalized least squares without intercept, one row per event; the
    design is scale-standardized (not centered) so the stationarity structure
    of the residual regression is preserved."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] == 0:
        raise NoEventsError("no event rows")
    prob = LassoProblem.gaussian(
        x, y, weights=weights, intercept=False, standardize=standardize
    )
    return lasso_fit(prob, lam)
