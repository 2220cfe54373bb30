"""Fit, select, validate, and interpret a low-rank-plus-sparse-graph model
for multivariate binary data via regularized pseudo-likelihood."""

from .admm import (
    RegularizedFit,
    SolverConfig,
    SolverState,
    admm_fit,
    extract_structure,
    penalized_objective,
    prox_l1_offdiag,
    prox_nuclear_psd,
    prox_smooth_M,
    project_consistency,
)
from .data import BinaryDataset, load_csv, save_csv
from .evaluation import (
    StudyResult,
    criterion_path_capture,
    run_simulation_study,
    selection_metrics,
)
from .exact import ExactPmf, enumerate_pmf, exact_conditional, ising_normalizer
from .gof import GofReport, parametric_bootstrap_gof, unnormalized_loglik
from .interpret import (
    RotationResult,
    ScaleKey,
    factor_scores,
    loadings_from_L,
    maximal_cliques,
    scale_correlations,
    varimax,
)
from .pseudolik import (
    FlagParams,
    LoadingMatrix,
    conditional_prob,
    grad_h,
    log_pseudo_likelihood,
)
from .selection import (
    PathEntry,
    SelectionResult,
    bic_of_entry,
    count_free_params,
    fit_irt_baseline,
    grid_search_select,
    refit_constrained,
)
from .simulate import (
    GibbsConfig,
    SimDesign,
    SimTruth,
    builtin_design,
    gibbs_sample,
    sample_theta,
    sample_x_given_theta,
    simulate_dataset,
    theta_log_density_unnorm,
)

__version__ = "0.1.0"
