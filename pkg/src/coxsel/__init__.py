"""Confounder selection and post-selection inference for the exposure effect
in Cox proportional hazards models.

The package provides the survival-data plumbing, an unpenalized Cox engine,
l1-penalized solvers with cross-validation, the decorrelated-score machinery,
four end-to-end inference pipelines, a Monte Carlo lab, and a CLI.
"""

from ._kernels import BACKEND
from .cox import (
    CoxFit,
    ResidualSet,
    WaldResult,
    breslow_baseline,
    fit_cox,
    partial_information,
    partial_loglik,
    partial_score,
    robust_variance,
    schoenfeld_residuals,
    wald_test,
)
from .data import (
    CsvSchema,
    RiskIndex,
    SurvivalDataset,
    build_risk_index,
    ingest_csv,
    standardize_covariates,
    write_csv,
)
from .dscore import (
    DecorrelatedInference,
    GammaEstimate,
    ScoreContext,
    build_score_context,
    constrained_gamma,
    estimate_gamma_lasso,
    fang_one_step,
    theorem1_variance,
    u_hat,
)
from .lasso import (
    CvResult,
    LassoFit,
    LassoPath,
    LassoProblem,
    cross_validate,
    kkt_residual,
    lasso_fit,
    lasso_path,
    weighted_linear_lasso,
)
from .pipelines import (
    METHODS,
    InferenceReport,
    PipelineConfig,
    SelectionReport,
    censoring_dataset,
    run_double_selection,
    run_fang,
    run_methods,
    run_poor_mans,
    run_post_lasso,
    run_triple_selection,
)
from .simlab import (
    DgpConfig,
    ExperimentGrid,
    GridCell,
    GridResult,
    SubsampleRow,
    SubsampleTable,
    full_data_benchmark,
    generate_dataset,
    run_grid,
    run_subsample_study,
)

__version__ = "0.1.0"
