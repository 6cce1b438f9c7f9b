"""Gaussian DAG structure learning with the empirical sparse Cholesky prior."""

from .exceptions import (
    ColumnError,
    DegenerateTruth,
    InvalidInit,
    InvalidState,
    NotPositiveDefinite,
    SingularGram,
)
from .gram import (
    DataMatrix,
    FitSummary,
    fit_support,
    least_squares,
    residual_variance,
    update_add,
    update_remove,
)
from .mcd import CholeskyModel, ConditionReport, check_conditions, compose, decompose, matrix_norm
from .posterior import (
    Hyperparams,
    SupportScore,
    default_R,
    log_marginal_support,
    log_prior_support,
    sample_a,
    sample_d,
)
from .sampler import (
    ChainConfig,
    ChainTrace,
    DagFit,
    brute_force_posterior,
    draw_posterior_models,
    fit_dag,
    mh_step,
    propose,
    run_chain,
    sample_posterior_model,
)
from .simulate import (
    SelectionMetrics,
    TruthSpec,
    generate_truth,
    rate_probe,
    sample_gaussian,
    sample_laplace,
    selection_metrics,
)

__version__ = "0.1.0"
