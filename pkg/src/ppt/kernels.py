"""Kernel families, sample kernel matrices, finite feature maps, and
marginal-likelihood bandwidth selection with the group-wise smoothness
safeguard.

Families: linear 1 + x'y, polynomial (1 + x'y)^p, gaussian
exp(-sum_k w_k (x_k-y_k)^2), rational-quadratic
(1 + sum_k w_k (x_k-y_k)^2)^(-eta), and truncated-basis
sum_{j<=q} e_j(x) e_j(y).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize as _sopt

from .dataset import Dataset, group_index
from .gpr import profile_vcm1

FAMILIES = ("linear", "polynomial", "gaussian", "rq", "truncated")
BASIS_FAMILIES = ("monomial", "fourier")

# box constraints for bandwidth search, in natural log
LOG_BW_LO, LOG_BW_HI = -9.0, 4.0
# rational-quadratic exponent box (log scale); the bandwidth box above is
# fixed by design, this one is ours
LOG_EXP_LO, LOG_EXP_HI = -2.0, 3.0

DEFAULT_JITTER = 1e-5
DEFAULT_GAMMA = 0.1

# smallest group size worth a stand-alone bandwidth fit; below this the
# group-wise safeguard is skipped
MIN_GROUP_FIT = 8


@dataclass(frozen=True)
class KernelSpec:
    """One kernel function: family plus its parameters and diagonal jitter.

    bandwidths has length 1 (isotropic, shared across coordinates) or d.
    jitter is the ridge added by build_kernel_matrix; keep it at 0 for
    matrices fed to the permutation engine and positive inside model fits.
    """

    family: str
    degree: int = 1
    bandwidths: tuple[float, ...] = ()
    exponent: float = 1.0
    q: int = 1
    basis: str = "monomial"
    jitter: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "polynomial" and (
            self.degree < 1 or self.degree != int(self.degree)
        ):
            raise ValueError("polynomial degree must be a positive integer")
        if self.family in ("gaussian", "rq"):
            if not self.bandwidths:
                raise ValueError(f"{self.family} kernel needs bandwidths")
            if any(w <= 0.0 for w in self.bandwidths):
                raise ValueError("bandwidths must be positive")
        if self.family == "rq" and self.exponent <= 0.0:
            raise ValueError("rational-quadratic exponent must be positive")
        if self.family == "truncated":
            if self.q < 1:
                raise ValueError("truncated-basis size q must be >= 1")
            if self.basis not in BASIS_FAMILIES:
                raise ValueError(f"unknown basis family {self.basis!r}")
        if self.jitter < 0.0:
            raise ValueError("jitter must be nonnegative")


def kernel_spec(family: str, *, jitter: float | None = None, **kw) -> KernelSpec:
    """KernelSpec factory applying the default jitter (1e-5 for the two
    infinite-dimensional families, 0 otherwise) when none is given."""
    if jitter is None:
        jitter = DEFAULT_JITTER if family in ("gaussian", "rq") else 0.0
    return KernelSpec(family=family, jitter=jitter, **kw)


def _bw_vector(spec: KernelSpec, d: int) -> np.ndarray:
    w = np.asarray(spec.bandwidths, dtype=float)
    if w.shape[0] == 1:
        return np.full(d, w[0])
    if w.shape[0] != d:
        raise ValueError(
            f"kernel has {w.shape[0]} bandwidths but data has {d} coordinates"
        )
    return w


def eval_kernel(spec: KernelSpec, x: np.ndarray, xp: np.ndarray) -> float:
    """Kernel value at one pair of points (no jitter)."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ValueError("point dimensions disagree")
    if spec.family == "linear":
        return 1.0 + float(x @ xp)
    if spec.family == "polynomial":
        return (1.0 + float(x @ xp)) ** spec.degree
    if spec.family in ("gaussian", "rq"):
        w = _bw_vector(spec, x.shape[0])
        ssq = float(w @ (x - xp) ** 2)
        if spec.family == "gaussian":
            return math.exp(-ssq)
        return (1.0 + ssq) ** (-spec.exponent)
    phi = basis_features(x[None, :], spec.q, spec.basis)
    phip = basis_features(xp[None, :], spec.q, spec.basis)
    return float(phi[0] @ phip[0])


def _weighted_sqdist(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    xs = x * np.sqrt(w)
    sq = np.sum(xs * xs, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (xs @ xs.T)
    np.clip(d2, 0.0, None, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def build_kernel_matrix(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """n-by-n kernel matrix on the rows of x, plus spec.jitter on the
    diagonal. Exactly symmetric by construction."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if spec.family == "linear":
        k = 1.0 + x @ x.T
    elif spec.family == "polynomial":
        k = (1.0 + x @ x.T) ** spec.degree
    elif spec.family in ("gaussian", "rq"):
        d2 = _weighted_sqdist(x, _bw_vector(spec, d))
        k = np.exp(-d2) if spec.family == "gaussian" else (1.0 + d2) ** (-spec.exponent)
        np.fill_diagonal(k, 1.0)
    else:
        phi = basis_features(x, spec.q, spec.basis)
        k = phi @ phi.T
    k = 0.5 * (k + k.T)
    if spec.jitter > 0.0:
        k[np.diag_indices(n)] += spec.jitter
    return k


def feature_dimension(spec: KernelSpec, d: int):
    """Dimension of the kernel's feature space: d+1, C(d+p, d), q, or
    math.inf for the two infinite-dimensional families."""
    if spec.family == "linear":
        return d + 1
    if spec.family == "polynomial":
        return math.comb(d + spec.degree, d)
    if spec.family == "truncated":
        return spec.q
    return math.inf


# ---------------------------------------------------------------------------
# finite feature maps
# ---------------------------------------------------------------------------

def _monomial_exponents(d: int, count: int):
    """First `count` exponent vectors in graded (total degree, then lex
    index) order: degree 0, then all degree-1 terms, and so on."""
    out = []
    degree = 0
    while len(out) < count:
        for combo in itertools.combinations_with_replacement(range(d), degree):
            e = [0] * d
            for idx in combo:
                e[idx] += 1
            out.append(tuple(e))
            if len(out) == count:
                return out
        degree += 1
    return out


def basis_features(x: np.ndarray, q: int, basis: str = "monomial") -> np.ndarray:
    """Evaluate the first q basis functions at the rows of x -> (n, q)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    if basis == "monomial":
        cols = []
        for e in _monomial_exponents(d, q):
            col = np.ones(n)
            for k, p in enumerate(e):
                if p:
                    col = col * x[:, k] ** p
            cols.append(col)
        return np.column_stack(cols)
    if basis == "fourier":
        if d != 1:
            raise ValueError("fourier basis is defined for d=1 only")
        t = x[:, 0]
        cols = [np.ones(n)]
        k = 1
        while len(cols) < q:
            cols.append(np.cos(k * np.pi * t))
            if len(cols) < q:
                cols.append(np.sin(k * np.pi * t))
            k += 1
        return np.column_stack(cols[:q])
    raise ValueError(f"unknown basis family {basis!r}")


def poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of total degree <= degree; spans the polynomial
    kernel's feature space (C(d+degree, d) columns)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q = math.comb(x.shape[1] + degree, x.shape[1])
    return basis_features(x, q, "monomial")


def features_for(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Feature matrix for a finite-dimensional kernel family."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.family == "linear":
        return np.column_stack([np.ones(x.shape[0]), x])
    if spec.family == "polynomial":
        return poly_features(x, spec.degree)
    if spec.family == "truncated":
        return basis_features(x, spec.q, spec.basis)
    raise ValueError(f"{spec.family} kernel has no finite feature map")


def choose_q_n(n: int, kappa: float) -> int:
    """Truncation size n**(2/(2*kappa+1)), rounded and clamped to [1, n-1]."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    q = int(np.round(float(n) ** (2.0 / (2.0 * kappa + 1.0))))
    return max(1, min(q, n - 1))


# ---------------------------------------------------------------------------
# bandwidth selection by marginal likelihood
# ---------------------------------------------------------------------------

class KernelFitError(ValueError):
    """Optimizer budget exhausted; carries the best parameters seen."""

    def __init__(self, message: str, best: KernelSpec):
        super().__init__(message)
        self.best = best


def _null_loglik_for_kernel(
    spec: KernelSpec,
    x: np.ndarray,
    y: np.ndarray,
    gamma: float,
    whitener: np.ndarray | None,
) -> float:
    """Maximized marginal loglik of the shared-function null for one kernel."""
    k = build_kernel_matrix(spec, x)
    if whitener is not None:
        k = whitener @ k @ whitener
        k = 0.5 * (k + k.T)
    vals, vecs = np.linalg.eigh(k)
    dvals = np.maximum(vals, 0.0) / float(len(y)) ** (1.0 - gamma)
    u = vecs.T @ y
    ll, _, _ = profile_vcm1(dvals[::-1], (u * u)[::-1])
    return ll


def _fit_bandwidths(
    x: np.ndarray,
    y: np.ndarray,
    family: str,
    gamma: float,
    isotropic: bool,
    jitter: float,
    whitener: np.ndarray | None,
) -> KernelSpec:
    d = x.shape[1]
    n_bw = 1 if isotropic else d
    fit_exp = family == "rq"
    n_par = n_bw + (1 if fit_exp else 0)

    def spec_of(params: np.ndarray) -> KernelSpec:
        bw = tuple(np.exp(params[:n_bw]))
        eta = float(np.exp(params[n_bw])) if fit_exp else 1.0
        return KernelSpec(
            family=family, bandwidths=bw, exponent=eta, jitter=jitter
        )

    def objective(params: np.ndarray) -> float:
        return -_null_loglik_for_kernel(spec_of(params), x, y, gamma, whitener)

    if n_par == 1:
        # 1-d search: coarse log-spaced scan, then bounded refinement around
        # the best cell. Derivative-free, same box as the general path.
        grid = np.linspace(LOG_BW_LO, LOG_BW_HI, 27)
        vals = np.array([objective(np.array([t])) for t in grid])
        k = int(np.argmin(vals))
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.shape[0] - 1)]
        res = _sopt.minimize_scalar(
            lambda t: objective(np.array([t])),
            bounds=(lo, hi), method="bounded",
            options={"xatol": 5e-3},
        )
        best_t = float(res.x) if res.fun <= vals[k] else float(grid[k])
        return spec_of(np.array([best_t]))

    # multi-parameter: Nelder-Mead restarted from 5 log-spaced diagonal starts
    starts = np.linspace(LOG_BW_LO, LOG_BW_HI, 5)
    bounds = [(LOG_BW_LO, LOG_BW_HI)] * n_bw
    if fit_exp:
        bounds.append((LOG_EXP_LO, LOG_EXP_HI))
    best = None
    any_converged = False
    for t in starts:
        x0 = np.full(n_par, t)
        if fit_exp:
            x0[n_bw] = 0.0
        res = _sopt.minimize(
            objective, x0, method="Nelder-Mead", bounds=bounds,
            options={"xatol": 1e-2, "fatol": 1e-7, "maxfev": 200 * n_par},
        )
        any_converged = any_converged or bool(res.success)
        if best is None or res.fun < best.fun:
            best = res
    if not any_converged:
        raise KernelFitError(
            "bandwidth optimizer failed to converge within its budget",
            spec_of(best.x),
        )
    return spec_of(best.x)


def safeguard_bandwidths(pooled, groups) -> np.ndarray:
    """Componentwise-max fallback: replace the pooled bandwidths only when
    every per-group fit is componentwise strictly smaller (the pooled fit
    undersmooths relative to every group); otherwise keep the pooled fit."""
    pooled = np.asarray(pooled, dtype=float)
    groups = [np.asarray(g, dtype=float) for g in groups]
    if groups and all(np.all(g < pooled) for g in groups):
        return np.max(np.stack(groups), axis=0)
    return pooled


def fit_kernel_params(
    ds: Dataset,
    family: str = "gaussian",
    gamma: float = DEFAULT_GAMMA,
    *,
    isotropic: bool = True,
    jitter: float | None = None,
    whitener: np.ndarray | None = None,
    safeguard: bool = True,
) -> KernelSpec:
    """Select bandwidths by maximizing the null-model marginal likelihood.

    The pooled fit is compared against per-group fits: when every group fit
    gives componentwise smaller bandwidths than the pooled fit (the pooled
    fit undersmooths relative to every group), each bandwidth is replaced by
    the componentwise maximum of the group fits. Group fits are skipped when
    a whitener is active or any group is smaller than MIN_GROUP_FIT.
    """
    if family not in ("gaussian", "rq"):
        raise ValueError("bandwidth fitting applies to gaussian and rq kernels")
    if jitter is None:
        jitter = DEFAULT_JITTER
    pooled = _fit_bandwidths(
        ds.x, ds.y, family, gamma, isotropic, jitter, whitener
    )
    if not safeguard or ds.n_groups < 2 or whitener is not None:
        return pooled
    gi = group_index(ds)
    if min(gi.sizes) < MIN_GROUP_FIT:
        return pooled
    group_bw = []
    for rows in gi.indices:
        fit = _fit_bandwidths(
            ds.x[rows], ds.y[rows], family, gamma, isotropic, jitter, None
        )
        group_bw.append(np.asarray(fit.bandwidths))
    merged = safeguard_bandwidths(pooled.bandwidths, group_bw)
    return replace(pooled, bandwidths=tuple(float(v) for v in merged))
