"""Choosing how much of the response to permute.

The correction owed for permuting b trailing eigen-components depends on how
much signal those components still carry. Two regimes are supported: a
fixed-function bound driven by the plug-in leftover signal, and a
Gaussian-process bound driven by the fitted signal-to-noise ratio and the
kernel eigenvalues. Both corrections are nondecreasing in b, which makes the
size rule (largest b whose correction fits a fixed budget) a binary search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .gpr import profile_vcm1
from .kernels import KernelSpec, build_kernel_matrix
from .numerics import EigenSystem, chi2_quantile, eigendecompose_symmetric

# budget split for the automatic size rule: alpha0 = ALPHA0_FACTOR * alpha,
# and b_n is the largest size with correction + alpha0 <= BUDGET_FACTOR * alpha
ALPHA0_FACTOR = 1e-4
BUDGET_FACTOR = 1e-3


@dataclass(frozen=True)
class SizingInputs:
    """Inputs to the size rule: the eigen system of the (possibly whitened)
    kernel matrix, the fitted variance ratio, and the standardized fitted
    function values (f-hat divided by the residual noise scale)."""

    es: EigenSystem
    xi: float = 0.0
    f_std: np.ndarray | None = None

    def __post_init__(self):
        if self.xi < 0.0:
            raise ValueError("variance ratio must be nonnegative")


@dataclass(frozen=True)
class SizeChoice:
    b_n: int
    alpha0: float
    correction: float
    budget: float
    warning: str | None = None


@dataclass(frozen=True)
class NuisanceEstimates:
    """Null-model plug-ins: variance ratio, fitted function values, residual
    noise scale, and the raw fitted variance components."""

    xi: float
    f_hat: np.ndarray
    sigma0: float
    delta2: float
    sigma2_mle: float
    loglik: float

    @property
    def delta2_is_zero(self) -> bool:
        return self.delta2 == 0.0


def leftover_signal(es: EigenSystem, f_vec: np.ndarray, sigma: float, b_n: int) -> float:
    """Signal energy in the b_n trailing eigen-components, in noise units:
    sigma**-2 times the sum of squared tail projections of f_vec."""
    if sigma <= 0.0:
        raise ValueError("noise scale must be positive")
    n = es.n
    if not 1 <= b_n <= n:
        raise ValueError(f"b_n must lie in [1, {n}]")
    proj = es.gamma.T @ np.asarray(f_vec, dtype=float).ravel()
    return float(np.sum(proj[n - b_n:] ** 2)) / (sigma * sigma)


def correction_fixed(b_n: int, omega: float, alpha0: float) -> float:
    """Validity correction for the fixed-function regime.

    exp{2 sqrt(2 omega) sqrt(q + omega)}/2 - 1/2 with q the chi-square
    (1 - alpha0)-quantile at b_n degrees of freedom. Zero when nothing is
    permuted or no signal is left over.
    """
    if omega < 0.0:
        raise ValueError("leftover signal must be nonnegative")
    if b_n == 0 or omega == 0.0:
        return 0.0
    q = chi2_quantile(b_n, 1.0 - alpha0)
    expo = 2.0 * math.sqrt(2.0 * omega) * math.sqrt(q + omega)
    try:
        return 0.5 * math.exp(expo) - 0.5
    except OverflowError:
        return math.inf


def leftover_signal_gp(xi: float, es: EigenSystem, b_n: int) -> float:
    """Leftover signal under the Gaussian-process prior: the variance ratio
    times the largest eigenvalue entering the permuted block."""
    if xi < 0.0:
        raise ValueError("variance ratio must be nonnegative")
    n = es.n
    if not 1 <= b_n <= n:
        raise ValueError(f"b_n must lie in [1, {n}]")
    zeta = float(es.values[n - b_n])
    if zeta == 0.0:
        # a zero eigenvalue carries no signal even when xi is infinite
        return 0.0
    return xi * zeta


def correction_gp(b_n: int, omega: float, alpha0: float) -> float:
    """Validity correction for the Gaussian-process regime:
    exp{omega q / 2}/2 - 1/2 with q the chi-square quantile as above."""
    if omega < 0.0:
        raise ValueError("leftover signal must be nonnegative")
    if b_n == 0 or omega == 0.0:
        return 0.0
    q = chi2_quantile(b_n, 1.0 - alpha0)
    try:
        return 0.5 * math.exp(0.5 * omega * q) - 0.5
    except OverflowError:
        return math.inf


def estimate_nuisance_from_eigen(
    es: EigenSystem, y: np.ndarray, gamma: float, jitter: float
) -> NuisanceEstimates:
    """Null-model MLE and plug-ins from a precomputed eigen system of the
    unjittered kernel matrix.

    The variance components are fitted with the jitter added to the
    eigenvalues (the fitting convention), while the fitted function values
    use the unjittered eigenvalues in the shrinkage weights.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = es.n
    scale = float(n) ** (1.0 - gamma)
    u = es.gamma.T @ y
    dfit = (es.values + jitter) / scale
    ll, delta2, sigma2 = profile_vcm1(dfit, u * u)
    if delta2 == 0.0 or sigma2 == 0.0:
        if delta2 == 0.0:
            f_hat = np.zeros(n)
            resid_u = u
            xi = 0.0
        else:
            # pure-signal boundary: no noise left, everything is signal
            f_hat = es.gamma @ u
            resid_u = np.zeros(n)
            xi = math.inf
    else:
        ridge = scale * sigma2 / delta2
        shrink = es.values / (es.values + ridge)
        f_hat = es.gamma @ (shrink * u)
        resid_u = (1.0 - shrink) * u
        xi = delta2 / (scale * sigma2)
    sigma0 = math.sqrt(float(np.mean(resid_u ** 2)))
    return NuisanceEstimates(
        xi=xi, f_hat=f_hat, sigma0=sigma0, delta2=float(delta2),
        sigma2_mle=float(sigma2), loglik=float(ll),
    )


def estimate_nuisance(ds: Dataset, kernel: KernelSpec, gamma: float) -> NuisanceEstimates:
    """estimate_nuisance_from_eigen on a freshly built kernel matrix."""
    k0 = build_kernel_matrix(replace(kernel, jitter=0.0), ds.x)
    es = eigendecompose_symmetric(k0)
    return estimate_nuisance_from_eigen(es, ds.y, gamma, kernel.jitter)


def choose_b_n(
    mode: str, inputs: SizingInputs, alpha: float, method: str = "bisect"
) -> SizeChoice:
    """Largest permutation size whose correction fits the validity budget.

    alpha0 = 1e-4 * alpha; the chosen b_n is the largest b in [0, n] with
    correction(b) + alpha0 <= 1e-3 * alpha. Both corrections are
    nondecreasing in b, so bisection and the linear-scan fallback agree.
    The pipeline reports the corrected p-value as raw + 1e-3 * alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if mode not in ("fixed", "gp"):
        raise ValueError(f"mode must be fixed or gp, not {mode!r}")
    if method not in ("bisect", "scan"):
        raise ValueError(f"method must be bisect or scan, not {method!r}")
    n = inputs.es.n
    alpha0 = ALPHA0_FACTOR * alpha
    budget = BUDGET_FACTOR * alpha

    if mode == "fixed":
        if inputs.f_std is None:
            raise ValueError("fixed mode needs the standardized fitted function")
        proj = inputs.es.gamma.T @ np.asarray(inputs.f_std, dtype=float).ravel()
        tail_energy = np.concatenate([[0.0], np.cumsum(proj[::-1] ** 2)])

        def corr(b: int) -> float:
            return correction_fixed(b, float(tail_energy[b]), alpha0)
    else:
        xi = inputs.xi

        def corr(b: int) -> float:
            if b == 0:
                return 0.0
            return correction_gp(b, leftover_signal_gp(xi, inputs.es, b), alpha0)

    def ok(b: int) -> bool:
        return corr(b) + alpha0 <= budget

    if method == "scan":
        b_n = 0
        for b in range(n, -1, -1):
            if ok(b):
                b_n = b
                break
    else:
        lo, hi = 0, n  # ok(0) always holds: alpha0 = 1e-4*a <= 1e-3*a
        if ok(n):
            b_n = n
        else:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
            b_n = lo
    warning = None
    if b_n == 0:
        warning = "no permutation size satisfies the correction budget; b_n = 0"
    return SizeChoice(
        b_n=b_n, alpha0=alpha0, correction=corr(b_n), budget=budget,
        warning=warning,
    )


def corrected_pvalue(raw_p: float, v: float, alpha0: float) -> float:
    """raw p-value plus correction plus alpha0, deliberately uncapped."""
    if not 0.0 <= raw_p <= 1.0:
        raise ValueError("raw p-value must lie in [0, 1]")
    return raw_p + v + alpha0
