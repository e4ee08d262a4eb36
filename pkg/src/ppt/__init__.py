"""Kernel-based partial permutation tests for comparing functional
relationships across groups, with automatic permutation-size selection,
validity corrections, correlated-noise whitening, and simulation studies.
"""

__version__ = "0.1.0"

from .correlated import (
    CovarianceModel,
    dense_covariance,
    estimate_structured_rho,
    expand_covariance,
    normalize_covariance,
    paired_covariance,
    run_test_correlated,
    whiten,
)
from .dataset import (
    Dataset,
    GroupIndex,
    StandardizationState,
    group_index,
    load_dataset,
    make_dataset,
    standardize,
    unstandardize,
)
from .gpr import (
    GprModelSpec,
    VcmFit,
    VcmSpec,
    fit_model,
    fit_vcm1_em,
    fit_vcm2_em,
    fit_vcm2_newton,
    lr_statistic,
    marginal_loglik,
)
from .kernels import (
    KernelFitError,
    KernelSpec,
    basis_features,
    build_kernel_matrix,
    choose_q_n,
    eval_kernel,
    feature_dimension,
    fit_kernel_params,
    kernel_spec,
    safeguard_bandwidths,
)
from .numerics import (
    EigenSystem,
    QpProblem,
    eigendecompose_symmetric,
    inverse_sqrt_spd,
    solve_nonneg_qp,
    sqrt_spd,
)
from .permute import (
    PermutationPlan,
    TestReport,
    project_responses,
    run_test,
    sample_continuous,
    sample_discrete,
)
from .pipeline import auto_rho, null_fit, run_full_test
from .sim import (
    ScenarioSpec,
    StudyResult,
    TestConfig,
    generate,
    nonsmooth_g0,
    run_calibration,
    run_power,
    truncate_residuals,
)
from .sizing import (
    NuisanceEstimates,
    SizeChoice,
    SizingInputs,
    choose_b_n,
    corrected_pvalue,
    correction_fixed,
    correction_gp,
    estimate_nuisance,
    leftover_signal,
    leftover_signal_gp,
)
from .stats import (
    FeatureMap,
    ProjectionPair,
    f_statistic,
    feature_map_for,
    mse_statistic,
    projection_pair,
    statistic_adapter,
)

__all__ = [name for name in dir() if not name.startswith("_")]
