"""End-to-end exposure-effect procedures built from the penalized stages.

Every procedure reports a Wald test for the exposure coefficient after some
combination of variable-selection steps: an outcome Cox lasso, a censoring
Cox lasso on the flipped indicator, an exposure-model or residual-regression
lasso, and an unpenalized refit.  A workbench caches each stage so running
several procedures on the same data repeats no fits.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cox import fit_cox, wald_test
from .data import SurvivalDataset, build_risk_index
from .dscore import build_score_context, constrained_gamma, fang_one_step, theorem1_variance, u_hat
from .exceptions import NoEventsError, ValidationError
from .lasso import LassoProblem, cross_validate, lasso_path

METHODS = ("post-lasso", "poor-mans", "double", "triple", "fang")

# stage tags for deriving per-stage CV seeds from the master seed
_OUTCOME, _CENSORING, _EXPOSURE, _RESIDUAL_REFIT, _RESIDUAL_LASSO = range(5)


@dataclass(frozen=True)
class PipelineConfig:
    """Shared knobs for all procedures; one lambda rule applies to every
    selection step of a run."""

    cv_folds: int = 20
    lambda_rule: str = "1se"
    exposure_family: str = "auto"
    forced_in: tuple = ()
    seed: int = 0
    ci_level: float = 0.05

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be at least 2")
        if self.lambda_rule not in ("1se", "min"):
            raise ValidationError("lambda_rule must be '1se' or 'min'")
        if self.exposure_family not in ("auto", "linear", "logistic"):
            raise ValidationError("exposure_family must be auto, linear or logistic")
        if not (0.0 < self.ci_level < 1.0):
            raise ValidationError("ci_level must be in (0, 1)")
        if int(self.seed) < 0:
            raise ValidationError("seed must be nonnegative")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(
            self, "forced_in", tuple(sorted({int(j) for j in self.forced_in}))
        )


@dataclass(frozen=True)
class SelectionReport:
    """Index sets chosen by each step; None marks a step the method does not
    run.  union_B pools the sets that did run plus the forced-in indices."""

    selected_outcome: tuple
    selected_censoring: tuple
    selected_exposure: tuple
    union_B: tuple

    @property
    def sizes(self):
        return {
            "s_beta": len(self.selected_outcome),
            "s_eta": None if self.selected_censoring is None else len(self.selected_censoring),
            "s_gamma": None if self.selected_exposure is None else len(self.selected_exposure),
        }


@dataclass(frozen=True)
class InferenceReport:
    method: str
    estimate: float
    se: float
    z: float
    p_value: float
    ci_low: float
    ci_high: float
    level: float
    selection: SelectionReport
    diagnostics: dict


def censoring_dataset(data):
    """The same sample with censoring treated as the event.  A finite tau is
    an administrative end of study, not a censoring event, so rows reaching
    it are censored for this model too."""
    if math.isinf(data.tau):
        flipped = 1.0 - data.status
    else:
        flipped = np.where(data.time < data.tau, 1.0 - data.status, 0.0)
    return SurvivalDataset(
        data.time, flipped, data.exposure, data.covariates, names=data.names
    )


def _support(coef):
    return tuple(int(j) for j in np.flatnonzero(coef != 0.0))


class _Workbench:
    """Stage cache for one (data, config) pair; every stage is deterministic
    given the master seed, so procedures can share results freely."""

    def __init__(self, data, config):
        self.data = data
        self.config = config
        self.index = build_risk_index(data)
        for j in config.forced_in:
            if not 0 <= j < data.p:
                raise ValidationError(f"forced-in index {j} out of range")
        self._memo = {}

    def _get(self, key, builder):
        if key not in self._memo:
            self._memo[key] = builder()
        return self._memo[key]

    def _seed(self, tag):
        return int(np.random.SeedSequence([self.config.seed, tag]).generate_state(1)[0])

    def _pick(self, cv):
        return cv.index_1se if self.config.lambda_rule == "1se" else cv.index_min

    def _select(self, problem, tag):
        """CV over a full path; returns the coefficients at the chosen lambda."""
        path = lasso_path(problem)
        k = max(2, min(self.config.cv_folds, problem.n_obs))
        cv = cross_validate(problem, path=path, k=k, seed=self._seed(tag))
        return path.coefs[self._pick(cv)]

    def _union(self, *sets):
        pooled = set(self.config.forced_in)
        for s in sets:
            pooled.update(s)
        return tuple(sorted(pooled))

    # selection stages

    def outcome_lasso(self):
        """Step 1: Cox lasso for the outcome, exposure penalized along with
        the covariates."""

        def build():
            coef = self._select(LassoProblem.cox(self.data, self.index), _OUTCOME)
            return float(coef[0]), coef[1:].copy(), _support(coef[1:])

        return self._get("outcome", build)

    def censoring_selected(self):
        """Step 2: Cox lasso for censoring on the flipped indicator.  A sample
        with no censoring events has nothing to model and selects nothing."""

        def build():
            flipped = censoring_dataset(self.data)
            try:
                prob = LassoProblem.cox(flipped)
            except NoEventsError:
                return ()
            return _support(self._select(prob, _CENSORING)[1:])

        return self._get("censoring", build)

    def exposure_selected(self):
        """Step 3 of the regression form: a lasso for the exposure given the
        covariates, linear or logistic by family."""

        def build():
            if self.data.p == 0:
                return ()
            a = self.data.exposure
            family = self.config.exposure_family
            if family == "auto":
                family = "logistic" if np.all((a == 0.0) | (a == 1.0)) else "linear"
            make = LassoProblem.binomial if family == "logistic" else LassoProblem.gaussian
            coef = self._select(make(self.data.covariates, a), _EXPOSURE)
            return _support(coef)

        return self._get("exposure", build)

    def residual_stage(self, alpha, beta, tag):
        """Step 3 of the residual form: score context at (alpha, beta) and a
        CV'd lasso of the exposure residuals on the covariate residuals."""
        context = build_score_context(self.data, self.index, alpha, beta)
        if context.p == 0 or context.event_y.shape[0] < 2:
            return context, np.zeros(context.p), ()
        prob = LassoProblem.gaussian(
            context.event_x, context.event_y, intercept=False, standardize=True
        )
        gamma = self._select(prob, tag)
        return context, gamma, _support(gamma)

    def residual_at_refit(self):
        def build():
            fit = self.outcome_refit()
            return self.residual_stage(
                fit.alpha_hat, fit.beta_hat, _RESIDUAL_REFIT
            )

        return self._get("residual_refit", build)

    def residual_at_lasso(self):
        def build():
            alpha_l, beta_l, _ = self.outcome_lasso()
            return self.residual_stage(alpha_l, beta_l, _RESIDUAL_LASSO)

        return self._get("residual_lasso", build)

    # refits

    def refit(self, cols):
        cols = tuple(sorted({int(j) for j in cols}))
        return self._get(
            ("refit", cols), lambda: fit_cox(self.data, self.index, columns=cols)
        )

    def outcome_refit(self):
        return self.refit(self.outcome_lasso()[2])

    # report assembly

    def _sparsity(self, selection):
        s = max(v for v in selection.sizes.values() if v is not None)
        n = self.data.n
        return s * math.log(max(self.data.p, n)) / math.sqrt(n)

    def _report(self, method, estimate, se, selection, diagnostics):
        w = wald_test(estimate, se, level=self.config.ci_level)
        diagnostics = dict(diagnostics)
        diagnostics["sparsity"] = self._sparsity(selection)
        return InferenceReport(
            method=method,
            estimate=float(estimate),
            se=float(se),
            z=w.z,
            p_value=w.p_value,
            ci_low=w.ci_low,
            ci_high=w.ci_high,
            level=w.level,
            selection=selection,
            diagnostics=diagnostics,
        )

    def _refit_report(self, method, selection):
        fit = self.refit(selection.union_B)
        diag = {"refit_converged": fit.converged, "refit_iterations": fit.iterations}
        return self._report(method, fit.alpha_hat, fit.se_alpha_robust, selection, diag)

    # the procedures

    def post_lasso(self):
        s1 = self.outcome_lasso()[2]
        selection = SelectionReport(
            selected_outcome=s1,
            selected_censoring=None,
            selected_exposure=None,
            union_B=self._union(s1),
        )
        return self._refit_report("post-lasso", selection)

    def poor_mans(self):
        s1 = self.outcome_lasso()[2]
        s2 = self.censoring_selected()
        s3 = self.exposure_selected()
        selection = SelectionReport(
            selected_outcome=s1,
            selected_censoring=s2,
            selected_exposure=s3,
            union_B=self._union(s1, s2, s3),
        )
        return self._refit_report("poor-mans", selection)

    def _orthogonalized(self, method, with_censoring):
        s1 = self.outcome_lasso()[2]
        s2 = self.censoring_selected() if with_censoring else None
        _, _, s3 = self.residual_at_refit()
        union = self._union(s1, s2 or (), s3)
        fit = self.refit(union)
        context = build_score_context(
            self.data, self.index, fit.alpha_hat, fit.beta_hat
        )
        gamma = constrained_gamma(context, union)
        sigma2, v_hat = theorem1_variance(context, gamma.gamma)
        _, umean = u_hat(context, gamma.gamma)
        selection = SelectionReport(
            selected_outcome=s1,
            selected_censoring=s2,
            selected_exposure=s3,
            union_B=union,
        )
        se = math.sqrt(sigma2 / self.data.n)
        diag = {
            "refit_converged": fit.converged,
            "refit_iterations": fit.iterations,
            "score_mean_abs": abs(float(umean)),
            "v_hat": v_hat,
        }
        return self._report(method, fit.alpha_hat, se, selection, diag)

    def triple(self):
        return self._orthogonalized("triple", with_censoring=True)

    def double(self):
        return self._orthogonalized("double", with_censoring=False)

    def fang(self):
        alpha_l, beta_l, s1 = self.outcome_lasso()
        context, gamma_l, s3 = self.residual_at_lasso()
        result = fang_one_step(alpha_l, beta_l, gamma_l, context)
        selection = SelectionReport(
            selected_outcome=s1,
            selected_censoring=None,
            selected_exposure=s3,
            union_B=self._union(s1, s3),
        )
        diag = {
            "score_mean_abs": abs(result.score_at_solution),
            "v_hat": result.v_hat,
        }
        return self._report("fang", result.alpha_check, result.se, selection, diag)

    def run(self, method):
        runner = {
            "post-lasso": self.post_lasso,
            "poor-mans": self.poor_mans,
            "double": self.double,
            "triple": self.triple,
            "fang": self.fang,
        }.get(method)
        if runner is None:
            raise ValidationError(f"unknown method {method!r}")
        return runner()


def _prepare(data, config):
    if config is None:
        config = PipelineConfig()
    return _Workbench(data, config)


def run_post_lasso(data, config=None):
    """Outcome-model selection only: Cox lasso, then an unpenalized refit on
    exposure plus the selected covariates, with a robust Wald test."""
    return _prepare(data, config).post_lasso()


def run_poor_mans(data, config=None):
    """Union selection from the outcome model, the censoring model, and an
    exposure model, then an unpenalized refit with a robust Wald test."""
    return _prepare(data, config).poor_mans()


def run_triple_selection(data, config=None):
    """Union selection from the outcome model, the censoring model, and the
    residual regression, an unpenalized refit, and the orthogonalized-score
    variance for the Wald test."""
    return _prepare(data, config).triple()


def run_double_selection(data, config=None):
    """Triple selection without the censoring model."""
    return _prepare(data, config).double()


def run_fang(data, config=None):
    """One-step orthogonalized-score estimate from the l1-penalized outcome
    fit and residual regression, with no refit and no censoring model."""
    return _prepare(data, config).fang()


def run_methods(data, config=None, methods=METHODS):
    """Run several procedures on one dataset, sharing every common stage.
    Returns {method: InferenceReport}."""
    bench = _prepare(data, config)
    return {m: bench.run(m) for m in methods}
