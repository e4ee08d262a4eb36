"""One-call test drivers: preprocessing, kernel selection, permutation-size
choice, the permutation run, and the reported correction.

Order of operations: whiten (when a noise covariance is supplied), then
standardize, then fit bandwidths on the data the engine will actually see.
The permutation engine always works on the unjittered (whitened) kernel
matrix; model fits add the kernel's jitter to its eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .correlated import (
    CovarianceModel,
    expand_covariance,
    normalize_covariance,
    whiten,
)
from .dataset import Dataset
from .dataset import standardize as standardize_dataset
from .kernels import (
    DEFAULT_GAMMA,
    KernelFitError,
    KernelSpec,
    build_kernel_matrix,
    fit_kernel_params,
    kernel_spec,
)
from .numerics import eigendecompose_symmetric
from .permute import DEFAULT_N_PERM, PermutationPlan, TestReport, run_test
from .sizing import (
    SizingInputs,
    choose_b_n,
    correction_fixed,
    correction_gp,
    estimate_nuisance_from_eigen,
    leftover_signal,
    leftover_signal_gp,
)
from .stats import statistic_adapter

# families whose bandwidths are data-fitted and whose use implies
# standardized inputs unless the caller says otherwise
ADAPTIVE_FAMILIES = ("gaussian", "rq")


def _whitened_dataset(ds: Dataset, sigma_model: CovarianceModel):
    # only the scale-free part of a supplied covariance is meaningful
    sigma = normalize_covariance(expand_covariance(sigma_model, ds.n))
    y_c, transform = whiten(ds, sigma)
    y_c = np.asarray(y_c, dtype=float)
    y_c.setflags(write=False)
    out = replace(ds, y=y_c)
    return out, transform


def _resolve_kernel(kernel, ds, gamma, isotropic, whitener, warnings):
    """Family name -> fitted or default spec; KernelSpec -> as given."""
    if isinstance(kernel, KernelSpec):
        return kernel
    if not isinstance(kernel, str):
        raise ValueError("kernel must be a KernelSpec or a family name")
    if kernel in ADAPTIVE_FAMILIES:
        try:
            return fit_kernel_params(
                ds, kernel, gamma, isotropic=isotropic, whitener=whitener
            )
        except KernelFitError as err:
            warnings.append("bandwidth search did not converge; using best candidate")
            return err.best
    return kernel_spec(kernel)


def run_full_test(
    ds: Dataset,
    kernel="gaussian",
    plan: PermutationPlan | None = None,
    stat: str = "lr-pseudo",
    *,
    alpha: float = 0.05,
    gamma: float = DEFAULT_GAMMA,
    mode: str = "discrete",
    n_perm: int = DEFAULT_N_PERM,
    seed: int | None = None,
    standardize: bool | None = None,
    size_rule: str = "gp",
    sigma_model: CovarianceModel | None = None,
    custom_stat=None,
    isotropic: bool = True,
) -> TestReport:
    """Run the complete test.

    plan=None chooses b_n automatically from the fitted null model and
    reports the corrected p-value as raw + 1e-3*alpha (the budget the size
    rule enforces). A caller-supplied plan fixes b_n/mode/draws/seed and the
    corrected p-value becomes raw + correction(b_n) + alpha0.

    standardize=None means: standardize exactly when the kernel family is
    bandwidth-fitted (gaussian, rq).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if size_rule not in ("gp", "fixed"):
        raise ValueError("size_rule must be 'gp' or 'fixed'")
    warnings: list[str] = []

    transform = None
    work = ds
    if sigma_model is not None:
        work, transform = _whitened_dataset(ds, sigma_model)

    family = kernel.family if isinstance(kernel, KernelSpec) else kernel
    if standardize is None:
        standardize = family in ADAPTIVE_FAMILIES
    if standardize:
        work, _ = standardize_dataset(work)

    whitener = transform.m if transform is not None else None
    spec = _resolve_kernel(kernel, work, gamma, isotropic, whitener, warnings)

    k0 = build_kernel_matrix(replace(spec, jitter=0.0), work.x)
    if transform is not None:
        k0 = transform.kernel(k0)
    es = eigendecompose_symmetric(k0)

    nuis = estimate_nuisance_from_eigen(es, work.y, gamma, spec.jitter)
    f_std = nuis.f_hat / nuis.sigma0 if nuis.sigma0 > 0.0 else None
    inputs = SizingInputs(es=es, xi=nuis.xi, f_std=f_std)

    if plan is None:
        choice = choose_b_n(size_rule, inputs, alpha)
        if choice.warning is not None:
            warnings.append(choice.warning)
        plan = PermutationPlan(
            b_n=choice.b_n, mode=mode, n_perm=n_perm, seed=seed
        )
        alpha0 = choice.alpha0
        correction = choice.budget - choice.alpha0
    else:
        alpha0 = 1e-4 * alpha
        b = plan.b_n
        if b == 0:
            correction = 0.0
        elif size_rule == "fixed":
            if f_std is None:
                correction = math.inf
            else:
                omega = leftover_signal(es, nuis.f_hat, nuis.sigma0, b)
                correction = correction_fixed(b, omega, alpha0)
        else:
            omega = leftover_signal_gp(nuis.xi, es, b)
            correction = correction_gp(b, omega, alpha0)

    k_fit = k0
    if spec.jitter > 0.0:
        k_fit = k0.copy()
        k_fit[np.diag_indices(work.n)] += spec.jitter
    stat_obj = statistic_adapter(
        stat,
        kernel=spec if stat != "custom" else None,
        gamma=gamma,
        k_fit=None if stat == "custom" else k_fit,
        whitener=whitener,
        custom=custom_stat,
    )

    report = run_test(work, es, plan, stat_obj)
    return replace(
        report,
        correction=correction,
        alpha0=alpha0,
        corrected_p=report.p_value + correction + alpha0,
        kernel=spec,
        nuisance=nuis,
        warnings=tuple(warnings) + report.warnings,
    )


def null_fit(ds: Dataset, kernel="gaussian", gamma: float = DEFAULT_GAMMA):
    """Preliminary shared-function fit, ignoring any noise covariance.

    Returns (fitted values in the original response units, nuisance
    estimates in the units the fit ran in). Bandwidth-fitted families are
    standardized first, exactly as the main pipeline does.
    """
    work = ds
    state = None
    family = kernel.family if isinstance(kernel, KernelSpec) else kernel
    if family in ADAPTIVE_FAMILIES:
        work, state = standardize_dataset(ds)
    warnings: list[str] = []
    spec = _resolve_kernel(kernel, work, gamma, True, None, warnings)
    k0 = build_kernel_matrix(replace(spec, jitter=0.0), work.x)
    es = eigendecompose_symmetric(k0)
    nuis = estimate_nuisance_from_eigen(es, work.y, gamma, spec.jitter)
    f_hat = nuis.f_hat
    if state is not None:
        f_hat = f_hat * state.y_sd + state.y_mean
    return f_hat, nuis


def auto_rho(ds: Dataset, pairs, kernel="gaussian", gamma: float = DEFAULT_GAMMA) -> float:
    """Correlation plug-in for the paired structure: residuals from a
    preliminary null fit that ignores the noise covariance."""
    from .correlated import estimate_structured_rho

    f_hat, _ = null_fit(ds, kernel, gamma)
    return estimate_structured_rho(ds, pairs, f_hat)
