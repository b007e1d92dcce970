"""Monte Carlo experiments: data generation, Type I error grids over the
outcome/censoring signal strengths, and a subsampling coverage study.

Seeding is counter based: every dataset and every pipeline run gets an
independent stream derived from (master seed, purpose, cell, replication),
so results are identical at any parallelism degree and any execution order.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import toeplitz

from .cox import fit_cox
from .data import SurvivalDataset, build_risk_index
from .exceptions import CoxselError, ValidationError
from .pipelines import METHODS, PipelineConfig, SelectionReport, _Workbench

log = logging.getLogger(__name__)

# reference methods available to experiments on top of the selection pipelines
REFERENCE_METHODS = ("oracle", "cox-all")

# purpose constants in the seed-derivation counters
_DATA, _PIPELINE, _SUBSAMPLE_ROWS, _SUBSAMPLE_PIPELINE = range(4)


@dataclass(frozen=True)
class DgpConfig:
    """One synthetic-data scenario: exponential event and censoring times
    whose log rates are linear in a Gaussian exposure and covariates."""

    n: int = 400
    p: int = 30
    mechanism: str = "a"
    rho: float = 0.5
    c_a: float = 2.0
    setting: int = 1
    b_scale: float = 1.0
    g_scale: float = 1.0
    alpha: float = 0.0
    eta1: float = 1.0
    beta0: float = 0.0
    eta0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValidationError("n and p must be at least 1")
        if self.mechanism not in ("a", "b"):
            raise ValidationError("mechanism must be 'a' or 'b'")
        if not (-1.0 < self.rho < 1.0):
            raise ValidationError("rho must be in (-1, 1)")
        if self.setting not in (1, 2):
            raise ValidationError("setting must be 1 or 2")
        if self.mechanism == "b" and self.p < 10:
            raise ValidationError("mechanism 'b' needs p >= 10")
        if int(self.seed) < 0:
            raise ValidationError("seed must be nonnegative")
        object.__setattr__(self, "seed", int(self.seed))


def _taper(p, length=10):
    """(1, 1/2, ..., 1/length, 0, ...), truncated to p entries."""
    v = np.zeros(p)
    k = min(p, length)
    v[:k] = 1.0 / np.arange(1, k + 1)
    return v


def nu_outcome(p):
    return _taper(p)


def nu_censoring(p, setting):
    """Two tapered blocks of five; setting 1 places the second block right
    after the first (positions 6-10), setting 2 at positions 11-15."""
    v = np.zeros(p)
    block = _taper(p, length=5)[: min(p, 5)]
    v[: block.shape[0]] = block
    start = 5 if setting == 1 else 10
    stop = min(p, start + 5)
    if stop > start:
        v[start:stop] = block[: stop - start]
    return v


def nu_exposure(p, c_a):
    return c_a * _taper(p)


def true_outcome_support(config):
    """Covariate positions with nonzero outcome coefficients."""
    beta = config.b_scale * nu_outcome(config.p)
    return tuple(int(j) for j in np.flatnonzero(beta != 0.0))


def generate_dataset(config):
    """Draw one sample.  Mechanism 'a' draws (A, L) jointly Gaussian with a
    Toeplitz rho^|j-k| covariance via its lower Cholesky factor, exposure
    first; mechanism 'b' draws independent covariates and a Gaussian exposure
    centered at nu_A'L.  Event and censoring times are exponential with log
    rates beta0 + alpha*A + beta'L and eta0 + eta1*A + eta2'L."""
    rng = np.random.default_rng(config.seed)
    n, p = config.n, config.p
    if config.mechanism == "a":
        chol = np.linalg.cholesky(toeplitz(config.rho ** np.arange(p + 1)))
        x = rng.standard_normal((n, p + 1)) @ chol.T
        a, l = x[:, 0], x[:, 1:]
    else:
        l = rng.standard_normal((n, p))
        a = l @ nu_exposure(p, config.c_a) + rng.standard_normal(n)
    beta = config.b_scale * nu_outcome(p)
    eta2 = config.g_scale * nu_censoring(p, config.setting)
    rate_t = np.exp(config.beta0 + config.alpha * a + l @ beta)
    rate_c = np.exp(config.eta0 + config.eta1 * a + l @ eta2)
    t = rng.exponential(1.0 / rate_t)
    c = rng.exponential(1.0 / rate_c)
    time = np.minimum(t, c)
    status = (t <= c).astype(np.float64)
    names = tuple(f"x{j}" for j in range(1, p + 1))
    return SurvivalDataset(time, status, a, l, names=names)


@dataclass(frozen=True)
class ExperimentGrid:
    """A Type I error experiment: one DGP template swept over outcome and
    censoring signal scales, a fixed replication count per cell, and the
    methods to compare."""

    template: DgpConfig
    b_values: tuple = (0.5, 1.0, 2.0)
    g_values: tuple = (0.5, 1.0, 2.0)
    replications: int = 500
    methods: tuple = ("poor-mans",)
    level: float = 0.05
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if not (0.0 < self.level < 1.0):
            raise ValidationError("level must be in (0, 1)")
        if not self.methods:
            raise ValidationError("no methods requested")
        known = METHODS + REFERENCE_METHODS
        for m in self.methods:
            if m not in known:
                raise ValidationError(f"unknown method {m!r}")
        object.__setattr__(self, "b_values", tuple(float(v) for v in self.b_values))
        object.__setattr__(self, "g_values", tuple(float(v) for v in self.g_values))

    @property
    def cells(self):
        return tuple((b, g) for b in self.b_values for g in self.g_values)


@dataclass(frozen=True)
class GridCell:
    """Aggregated results for one (method, b, g) cell; reps counts the
    successful replications, and reliable is False once failures exceed the
    2% cap."""

    method: str
    b: float
    g: float
    reps: int
    rejections: int
    rate: float
    mc_se: float
    mean_estimate: float
    mean_se: float
    failures: int
    reliable: bool


@dataclass(frozen=True)
class GridResult:
    grid: ExperimentGrid
    cells: tuple

    def cell(self, method, b, g):
        for c in self.cells:
            if c.method == method and c.b == b and c.g == g:
                return c
        raise KeyError((method, b, g))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "b", "g", "reps", "rejections", "rate", "mc_se"])
            for c in self.cells:
                w.writerow(
                    [c.method, _num(c.b), _num(c.g), c.reps, c.rejections,
                     _num(c.rate), _num(c.mc_se)]
                )

    def plot_rows(self):
        """Long-format rows (method, b, g, rate, mc_se) for external plotting."""
        return [(c.method, c.b, c.g, c.rate, c.mc_se) for c in self.cells]


def _num(x):
    return format(float(x), ".17g")


def _stream_seed(master, purpose, cell, rep):
    """Counter-based derivation: one independent stream per (purpose, cell,
    replication) triple under a master seed."""
    ss = np.random.SeedSequence([int(master), purpose, int(cell), int(rep)])
    return int(ss.generate_state(1)[0])


def _reference_report(bench, method, columns):
    """Unpenalized Cox fit on fixed columns, shaped like a pipeline report."""
    cols = tuple(int(j) for j in columns)
    fit = bench.refit(cols)
    selection = SelectionReport(
        selected_outcome=cols, selected_censoring=None,
        selected_exposure=None, union_B=cols,
    )
    diag = {"refit_converged": fit.converged, "refit_iterations": fit.iterations}
    return bench._report(method, fit.alpha_hat, fit.se_alpha_robust, selection, diag)


def _run_all(data, pipeline_config, methods, oracle_columns):
    """Run every requested method on one dataset through a shared stage
    cache; failures are captured per method, not per replication."""
    bench = _Workbench(data, pipeline_config)
    out = {}
    for m in methods:
        try:
            if m == "oracle":
                report = _reference_report(bench, m, oracle_columns)
            elif m == "cox-all":
                report = _reference_report(bench, m, range(data.p))
            else:
                report = bench.run(m)
            out[m] = ("ok", report.estimate, report.se, report.p_value,
                      report.ci_low, report.ci_high)
        except (CoxselError, np.linalg.LinAlgError) as err:
            out[m] = ("fail", type(err).__name__)
    return out


def _grid_rep(grid, cell_index, rep):
    b, g = grid.cells[cell_index]
    master = grid.template.seed
    dgp = replace(
        grid.template, b_scale=b, g_scale=g,
        seed=_stream_seed(master, _DATA, cell_index, rep),
    )
    data = generate_dataset(dgp)
    pcfg = replace(
        grid.pipeline, seed=_stream_seed(master, _PIPELINE, cell_index, rep)
    )
    return _run_all(data, pcfg, grid.methods, true_outcome_support(dgp))


def run_grid(grid, jobs=1):
    """All replications of every cell, reduced in replication order.  A cell
    with more than 2% failed replications is marked unreliable."""
    tasks = [
        (ci, rep)
        for ci in range(len(grid.cells))
        for rep in range(grid.replications)
    ]
    results = Parallel(n_jobs=jobs)(
        delayed(_grid_rep)(grid, ci, rep) for ci, rep in tasks
    )
    by_cell = {}
    for (ci, _), res in zip(tasks, results):
        by_cell.setdefault(ci, []).append(res)

    cells = []
    for m in grid.methods:
        for ci, (b, g) in enumerate(grid.cells):
            est, se, rej, failures = [], [], 0, 0
            for res in by_cell[ci]:
                rec = res[m]
                if rec[0] == "fail":
                    failures += 1
                    continue
                _, e, s, p, _, _ = rec
                est.append(e)
                se.append(s)
                rej += p < grid.level
            ok = len(est)
            rate = rej / ok if ok else math.nan
            mc_se = math.sqrt(rate * (1.0 - rate) / ok) if ok else math.nan
            if failures:
                log.warning(
                    "cell (b=%g, g=%g) method %s: %d failed replication(s)",
                    b, g, m, failures,
                )
            cells.append(GridCell(
                method=m, b=b, g=g, reps=ok, rejections=rej, rate=rate,
                mc_se=mc_se,
                mean_estimate=float(np.mean(est)) if ok else math.nan,
                mean_se=float(np.mean(se)) if ok else math.nan,
                failures=failures,
                reliable=failures <= 0.02 * grid.replications,
            ))
    return GridResult(grid=grid, cells=tuple(cells))


@dataclass(frozen=True)
class SubsampleRow:
    size: int
    method: str
    draws: int
    bias: float
    sd: float
    mean_se: float
    coverage: float
    failures: int
    redraws: int


@dataclass(frozen=True)
class SubsampleTable:
    benchmark: float
    rows: tuple

    def row(self, size, method):
        for r in self.rows:
            if r.size == size and r.method == method:
                return r
        raise KeyError((size, method))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "method", "bias", "sd", "mean_se", "coverage"])
            for r in self.rows:
                w.writerow(
                    [r.size, r.method, _num(r.bias), _num(r.sd),
                     _num(r.mean_se), _num(r.coverage)]
                )


def _take_rows(data, rows):
    return SurvivalDataset(
        data.time[rows], data.status[rows], data.exposure[rows],
        data.covariates[rows], tau=data.tau, names=data.names,
    )


def _subsample_rep(data, rows, pcfg, methods):
    return _run_all(_take_rows(data, rows), pcfg, methods, ())


def run_subsample_study(
    data, benchmark, sizes, n_subsamples,
    config=None, methods=("post-lasso", "poor-mans", "triple", "cox-all"),
    jobs=1,
):
    """Repeatedly analyze random subsamples (drawn without replacement) and
    compare each method's estimate and CI against the full-data benchmark
    value.  Subsamples with fewer than p + 2 events are redrawn with a
    logged count so every draw is analyzable."""
    if config is None:
        config = PipelineConfig()
    benchmark = float(benchmark)
    sizes = [int(s) for s in sizes]
    if any(s < 1 or s > data.n for s in sizes):
        raise ValidationError("subsample sizes must lie in [1, n]")
    if n_subsamples < 1:
        raise ValidationError("n_subsamples must be at least 1")
    for m in methods:
        if m not in METHODS + REFERENCE_METHODS:
            raise ValidationError(f"unknown method {m!r}")
        if m == "oracle":
            raise ValidationError("oracle is only defined for generated grids")
    min_events = data.p + 2

    rows_out = []
    for si, size in enumerate(sizes):
        rng = np.random.default_rng(
            _stream_seed(config.seed, _SUBSAMPLE_ROWS, si, 0)
        )
        draws, redraws = [], 0
        for _ in range(n_subsamples):
            attempts = 0
            while True:
                rows = np.sort(rng.choice(data.n, size=size, replace=False))
                if data.status[rows].sum() >= min(min_events, size):
                    break
                redraws += 1
                attempts += 1
                if attempts > 1000:
                    raise ValidationError(
                        f"cannot draw a size-{size} subsample with enough events"
                    )
            draws.append(rows)
        if redraws:
            log.warning("size %d: %d subsample redraw(s) for too few events",
                        size, redraws)
        configs = [
            replace(config, seed=_stream_seed(config.seed, _SUBSAMPLE_PIPELINE, si, d))
            for d in range(n_subsamples)
        ]
        results = Parallel(n_jobs=jobs)(
            delayed(_subsample_rep)(data, rows, cfg, methods)
            for rows, cfg in zip(draws, configs)
        )
        for m in methods:
            est, se, cover, failures = [], [], 0, 0
            for res in results:
                rec = res[m]
                if rec[0] == "fail":
                    failures += 1
                    continue
                _, e, s, _, lo, hi = rec
                est.append(e)
                se.append(s)
                cover += lo <= benchmark <= hi
            ok = len(est)
            if failures:
                log.warning("size %d method %s: %d failed subsample(s)",
                            size, m, failures)
            rows_out.append(SubsampleRow(
                size=size, method=m, draws=ok,
                bias=float(np.mean(est) - benchmark) if ok else math.nan,
                sd=float(np.std(est, ddof=1)) if ok > 1 else math.nan,
                mean_se=float(np.mean(se)) if ok else math.nan,
                coverage=cover / ok if ok else math.nan,
                failures=failures,
                redraws=redraws,
            ))
    return SubsampleTable(benchmark=benchmark, rows=tuple(rows_out))


def full_data_benchmark(data):
    """The unpenalized Cox estimate on exposure plus all covariates."""
    fit = fit_cox(data, build_risk_index(data), columns=range(data.p))
    return float(fit.alpha_hat)
