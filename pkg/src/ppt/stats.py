"""Test statistics comparing a pooled fit against per-group fits, packaged
as callbacks T(X, y, Z) for the permutation engine.

Every adapter also provides .batch(X, Y_columns, Z) evaluating many
resampled responses at once; the covariate-dependent preparation (feature
SVDs, kernel eigendecompositions) is cached across calls on the same data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dataset import Dataset, group_index
from .gpr import (
    fit_vcm2_newton,
    model_components,
    profile_vcm1_batch,
)
from .kernels import (
    DEFAULT_GAMMA,
    KernelSpec,
    build_kernel_matrix,
    feature_dimension,
    features_for,
)
from .numerics import RANK_RTOL

STATISTIC_NAMES = ("f", "mse", "lr-h1", "lr-h1prime", "lr-pseudo", "custom")


@dataclass(frozen=True)
class FeatureMap:
    """Finite feature map: dimension and row-wise transform X -> (n, dim)."""

    dim: int
    transform: Callable[[np.ndarray], np.ndarray]


def feature_map_for(spec: KernelSpec, d: int) -> FeatureMap:
    dim = feature_dimension(spec, d)
    if dim == math.inf:
        raise ValueError(f"{spec.family} kernel has no finite feature map")
    return FeatureMap(dim=int(dim), transform=lambda x: features_for(spec, x))


def pooled_feature_rank(spec: KernelSpec, x: np.ndarray) -> int:
    """Rank of the pooled finite-feature design on these covariates."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _orth_basis(features_for(spec, x)).shape[1]


@dataclass(frozen=True)
class ProjectionPair:
    """Ranks of the pooled and per-group designs plus the two residual
    transforms (never materialized as n-by-n matrices)."""

    p0: int
    p1: int
    resid_null: Callable[[np.ndarray], np.ndarray]
    resid_full: Callable[[np.ndarray], np.ndarray]


def _orth_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span, rank by relative threshold."""
    if a.size == 0:
        return np.zeros((a.shape[0], 0))
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((a.shape[0], 0))
    r = int(np.sum(s > RANK_RTOL * s[0]))
    return u[:, :r]


def _block_design(phi: np.ndarray, z: np.ndarray, n_groups: int) -> np.ndarray:
    n, q = phi.shape
    out = np.zeros((n, q * n_groups))
    for h in range(n_groups):
        rows = z == h + 1
        out[rows, h * q:(h + 1) * q] = phi[rows]
    return out


def projection_pair(
    fm: FeatureMap, x: np.ndarray, z: np.ndarray, n_groups: int,
    whitener: np.ndarray | None = None,
) -> ProjectionPair:
    phi = fm.transform(x)
    block = _block_design(phi, z, n_groups)
    if whitener is not None:
        phi = whitener @ phi
        block = whitener @ block
    q0 = _orth_basis(phi)
    q1 = _orth_basis(block)

    def resid_null(y: np.ndarray) -> np.ndarray:
        return y - q0 @ (q0.T @ y)

    def resid_full(y: np.ndarray) -> np.ndarray:
        return y - q1 @ (q1.T @ y)

    return ProjectionPair(
        p0=q0.shape[1], p1=q1.shape[1],
        resid_null=resid_null, resid_full=resid_full,
    )


def _f_from_bases(q0, q1, ymat, n):
    p0, p1 = q0.shape[1], q1.shape[1]
    if p1 == p0:
        raise ValueError("null and full designs coincide")
    if n <= p1:
        raise ValueError(f"need n > p1 = {p1}, got n = {n}")
    yss = np.sum(ymat * ymat, axis=0)
    r0 = yss - np.sum((q0.T @ ymat) ** 2, axis=0)
    r1 = yss - np.sum((q1.T @ ymat) ** 2, axis=0)
    if np.any(r1 <= 1e-12 * np.maximum(yss, 1e-300)):
        raise ValueError("saturated full model: residual sum of squares is zero")
    return ((r0 - r1) / (p1 - p0)) / (r1 / (n - p1)), p0, p1


def f_statistic(ds: Dataset, fm: FeatureMap) -> tuple[float, int, int]:
    """Ratio of the per-group model's improvement over the pooled model to
    its residual scale, with the two design ranks."""
    phi = fm.transform(ds.x)
    block = _block_design(phi, ds.z, ds.n_groups)
    fvals, p0, p1 = _f_from_bases(
        _orth_basis(phi), _orth_basis(block), ds.y[:, None], ds.n
    )
    return float(fvals[0]), p0, p1


def mse_statistic(ds: Dataset, pooled_fit: np.ndarray, group_fits) -> float:
    """n log(pooled MSE) minus the group-size-weighted log per-group MSEs.

    group_fits holds one fitted-value vector per group, aligned with the
    rows of that group in label order.
    """
    pooled_fit = np.asarray(pooled_fit, dtype=float).ravel()
    if pooled_fit.shape[0] != ds.n:
        raise ValueError("pooled fitted values must have length n")
    mse = float(np.mean((ds.y - pooled_fit) ** 2))
    if mse <= 0.0:
        raise ValueError("zero pooled MSE: fitted values interpolate the data")
    gi = group_index(ds)
    if len(group_fits) != ds.n_groups:
        raise ValueError("need one fitted-value vector per group")
    t = ds.n * math.log(mse)
    for rows, fit_h in zip(gi.indices, group_fits):
        fit_h = np.asarray(fit_h, dtype=float).ravel()
        if fit_h.shape[0] != rows.shape[0]:
            raise ValueError("group fitted values misaligned with group size")
        mse_h = float(np.mean((ds.y[rows] - fit_h) ** 2))
        if mse_h <= 0.0:
            raise ValueError("zero group MSE: fitted values interpolate the data")
        t -= rows.shape[0] * math.log(mse_h)
    return t


# ---------------------------------------------------------------------------
# adapters
# ---------------------------------------------------------------------------

def _fingerprint(x: np.ndarray, z: np.ndarray):
    return (x.shape, hash(x.tobytes()), hash(z.tobytes()))


class _CachedStatistic:
    """Base: prepares covariate-dependent structures once per dataset."""

    def __init__(self):
        self._key = None
        self._prep = None

    def _prepare(self, x, z):
        raise NotImplementedError

    def _get(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z).ravel().astype(int)
        key = _fingerprint(x, z)
        if key != self._key:
            self._prep = self._prepare(x, z)
            self._key = key
        return self._prep

    def __call__(self, x, y, z) -> float:
        y = np.asarray(y, dtype=float).ravel()
        return float(self.batch(x, y[:, None], z)[0])


class FStatistic(_CachedStatistic):
    """F statistic on the kernel's finite feature map."""

    name = "f"

    def __init__(self, kernel: KernelSpec, whitener: np.ndarray | None = None):
        super().__init__()
        self.kernel = kernel
        self.whitener = whitener

    def _prepare(self, x, z):
        n_groups = int(z.max())
        phi = features_for(self.kernel, x)
        block = _block_design(phi, z, n_groups)
        if self.whitener is not None:
            phi = self.whitener @ phi
            block = self.whitener @ block
        return _orth_basis(phi), _orth_basis(block)

    def batch(self, x, ymat, z) -> np.ndarray:
        q0, q1 = self._get(x, z)
        fvals, _, _ = _f_from_bases(q0, q1, np.asarray(ymat, dtype=float), ymat.shape[0])
        return fvals

    def ranks(self, x, z) -> tuple[int, int]:
        q0, q1 = self._get(x, z)
        return q0.shape[1], q1.shape[1]


def _fit_kernel_for_adapter(kernel, x, whitener):
    from dataclasses import replace

    k = build_kernel_matrix(replace(kernel, jitter=0.0), x)
    if whitener is not None:
        k = whitener @ k @ whitener
        k = 0.5 * (k + k.T)
    if kernel.jitter > 0.0:
        k = k.copy()
        k[np.diag_indices(k.shape[0])] += kernel.jitter
    return k


class _KernelFitStatistic(_CachedStatistic):
    """Shared preparation for statistics built on null/per-group
    two-component fits: pooled and per-group eigendecompositions of the
    (jittered, possibly whitened) kernel matrix."""

    def __init__(self, kernel, gamma, k_fit=None, whitener=None):
        super().__init__()
        self.kernel = kernel
        self.gamma = gamma
        self.k_fit = k_fit
        self.whitener = whitener

    def _prepare(self, x, z):
        n = x.shape[0]
        scale = float(n) ** (1.0 - self.gamma)
        k = self.k_fit
        if k is None:
            k = _fit_kernel_for_adapter(self.kernel, x, self.whitener)
        vals, vecs = np.linalg.eigh(k / scale)
        pooled = (np.maximum(vals, 0.0), vecs.T)
        groups = []
        for h in range(int(z.max())):
            rows = np.flatnonzero(z == h + 1)
            kh = k[np.ix_(rows, rows)] / scale
            vh, gh = np.linalg.eigh(kh)
            groups.append((rows, np.maximum(vh, 0.0), gh.T))
        return k, pooled, groups

    def _pooled_coords(self, prep, ymat):
        # index, not unpack: subclasses may append extra prep entries
        d0, m0 = prep[1]
        return d0, m0 @ ymat

    def _group_coords(self, prep, ymat):
        return [(rows, dh, mh @ ymat[rows]) for rows, dh, mh in prep[2]]


class MseStatistic(_KernelFitStatistic):
    """Pooled-vs-grouped kernel-regression MSE comparison; the shrinkage
    level is refit by marginal likelihood for every response column."""

    name = "mse"

    def batch(self, x, ymat, z) -> np.ndarray:
        ymat = np.asarray(ymat, dtype=float)
        prep = self._get(x, z)
        n = ymat.shape[0]

        def log_mse(dvals, u):
            _, t1, t2 = profile_vcm1_batch(dvals, u * u)
            fac = t2[None, :] / (t1[None, :] * dvals[:, None] + t2[None, :])
            mse = np.mean((fac * u) ** 2, axis=0)
            if np.any(mse <= 0.0):
                raise ValueError("zero MSE in a kernel-regression fit")
            return np.log(mse)

        d0, u0 = self._pooled_coords(prep, ymat)
        t = n * log_mse(d0, u0)
        for rows, dh, uh in self._group_coords(prep, ymat):
            t = t - rows.shape[0] * log_mse(dh, uh)
        return t


class LrPseudoStatistic(_KernelFitStatistic):
    """Log-likelihood ratio of the fully group-separated model against the
    shared-function null, both maximized exactly per response column."""

    name = "lr-pseudo"

    def batch(self, x, ymat, z) -> np.ndarray:
        ymat = np.asarray(ymat, dtype=float)
        prep = self._get(x, z)
        d0, u0 = self._pooled_coords(prep, ymat)
        ll0, _, _ = profile_vcm1_batch(d0, u0 * u0)
        ll1 = np.zeros(ymat.shape[1])
        for _, dh, uh in self._group_coords(prep, ymat):
            llh, _, _ = profile_vcm1_batch(dh, uh * uh)
            ll1 += llh
        return ll1 - ll0


class LrGeneralStatistic(_KernelFitStatistic):
    """Log-likelihood ratio for the shared-plus-group-offsets alternatives.

    Each permuted column requires a full Fisher-scoring fit, so this is far
    slower than the group-separated variant; batches fall back to a loop.
    """

    def __init__(self, alt, kernel, gamma, k_fit=None, whitener=None):
        super().__init__(kernel, gamma, k_fit=k_fit, whitener=whitener)
        if alt not in ("h1", "h1prime"):
            raise ValueError("alt must be h1 or h1prime")
        self.alt = alt
        self.name = f"lr-{alt}"

    def _prepare(self, x, z):
        base = super()._prepare(x, z)
        k = base[0]
        vspec = model_components(self.alt, k, z, int(z.max()), self.gamma)
        return (*base, vspec)

    def batch(self, x, ymat, z) -> np.ndarray:
        ymat = np.asarray(ymat, dtype=float)
        prep = self._get(x, z)
        vspec = prep[3]
        d0, u0 = self._pooled_coords(prep, ymat)
        ll0, _, _ = profile_vcm1_batch(d0, u0 * u0)
        out = np.empty(ymat.shape[1])
        for j in range(ymat.shape[1]):
            out[j] = fit_vcm2_newton(vspec, ymat[:, j]).loglik - ll0[j]
        return out


class CustomStatistic:
    """Plain wrapper; no batch path, the engine loops columns."""

    name = "custom"

    def __init__(self, func):
        if not callable(func):
            raise ValueError("custom statistic must be callable")
        self._func = func

    def __call__(self, x, y, z) -> float:
        return float(self._func(x, y, z))


def statistic_adapter(
    name: str,
    *,
    kernel: KernelSpec | None = None,
    gamma: float = DEFAULT_GAMMA,
    k_fit: np.ndarray | None = None,
    whitener: np.ndarray | None = None,
    custom=None,
):
    """Build the statistic callback for the permutation engine.

    kernel is required for every built-in statistic; k_fit optionally
    supplies a precomputed (jittered, possibly whitened) kernel matrix so
    the adapter does not rebuild one.
    """
    if name == "custom":
        return CustomStatistic(custom)
    if kernel is None:
        raise ValueError(f"statistic {name!r} needs a kernel spec")
    if name == "f":
        return FStatistic(kernel, whitener=whitener)
    if name == "mse":
        return MseStatistic(kernel, gamma, k_fit=k_fit, whitener=whitener)
    if name == "lr-pseudo":
        return LrPseudoStatistic(kernel, gamma, k_fit=k_fit, whitener=whitener)
    if name in ("lr-h1", "lr-h1prime"):
        return LrGeneralStatistic(
            name.removeprefix("lr-"), kernel, gamma, k_fit=k_fit, whitener=whitener
        )
    raise ValueError(f"unknown statistic {name!r}")
