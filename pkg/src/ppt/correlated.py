"""Correlated-noise extension: whitening by the inverse covariance square
root, structured covariance builders, and the whitened test entry point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .numerics import inverse_sqrt_spd, sqrt_spd


@dataclass(frozen=True)
class CovarianceModel:
    """Noise covariance known up to positive scale: either a dense SPD
    matrix, or a paired-equicorrelated structure (perfect matching of row
    indices plus a common within-pair correlation)."""

    dense: np.ndarray | None = None
    pairs: np.ndarray | None = None
    rho: float | None = None

    def __post_init__(self):
        has_dense = self.dense is not None
        has_pairs = self.pairs is not None or self.rho is not None
        if has_dense == has_pairs:
            raise ValueError("supply either a dense matrix or pairs with rho")
        if has_pairs and (self.pairs is None or self.rho is None):
            raise ValueError("structured form needs both pairs and rho")


def dense_covariance(sigma: np.ndarray) -> CovarianceModel:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance matrix must be square")
    return CovarianceModel(dense=sigma)


def paired_covariance(pairs, rho: float) -> CovarianceModel:
    pairs = np.asarray(pairs, dtype=int)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pair map must be an (m, 2) array of row indices")
    return CovarianceModel(pairs=pairs, rho=float(rho))


def expand_covariance(model: CovarianceModel, n: int) -> np.ndarray:
    """Materialize the n-by-n covariance (unit diagonal for the structured
    form; dense input is returned as supplied, scale handled at whitening)."""
    if model.dense is not None:
        sigma = model.dense
        if sigma.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max())):
            raise ValueError("covariance matrix must be symmetric")
        return 0.5 * (sigma + sigma.T)
    rho = float(model.rho)
    if not -1.0 < rho < 1.0:
        raise ValueError("correlation must be in (-1, 1)")
    pairs = np.asarray(model.pairs, dtype=int)
    flat = np.sort(pairs.ravel())
    if flat.shape[0] != n or not np.array_equal(flat, np.arange(1, n + 1)):
        raise ValueError("pair map is not a perfect matching of 1..n")
    sigma = np.eye(n)
    i = pairs[:, 0] - 1
    j = pairs[:, 1] - 1
    sigma[i, j] = rho
    sigma[j, i] = rho
    return sigma


def normalize_covariance(sigma: np.ndarray) -> np.ndarray:
    """Fix the free scale: rescale so the diagonal averages to one."""
    mean_diag = float(np.mean(np.diag(sigma)))
    if mean_diag <= 0.0:
        raise ValueError("covariance diagonal must be positive on average")
    return sigma / mean_diag


@dataclass(frozen=True)
class WhitenTransform:
    """Holds the inverse square root and its inverse; maps responses,
    kernel matrices, and back."""

    m: np.ndarray
    m_inv: np.ndarray

    def response(self, y: np.ndarray) -> np.ndarray:
        return self.m @ y

    def kernel(self, k: np.ndarray) -> np.ndarray:
        kc = self.m @ k @ self.m
        return 0.5 * (kc + kc.T)

    def unwhiten(self, y_c: np.ndarray) -> np.ndarray:
        return self.m_inv @ y_c


def whiten(ds: Dataset, sigma: np.ndarray) -> tuple[np.ndarray, WhitenTransform]:
    """Whitened response plus the reusable transform.

    Uses sigma exactly as given; callers handling user-supplied dense
    matrices fix the free scale with normalize_covariance first.
    """
    sigma = np.asarray(sigma, dtype=float)
    m = inverse_sqrt_spd(sigma)
    transform = WhitenTransform(m=m, m_inv=sqrt_spd(sigma))
    return transform.response(ds.y), transform


def estimate_structured_rho(ds: Dataset, pairs, f_hat: np.ndarray) -> float:
    """Sample correlation of paired residuals from a preliminary null-model
    fit, clamped away from the boundary."""
    pairs = np.asarray(pairs, dtype=int)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError("pair map must be an (m, 2) array of row indices")
    if pairs.shape[0] < 3:
        raise ValueError("need at least 3 pairs to estimate the correlation")
    resid = ds.y - np.asarray(f_hat, dtype=float).ravel()
    a = resid[pairs[:, 0] - 1]
    b = resid[pairs[:, 1] - 1]
    sa = float(np.std(a))
    sb = float(np.std(b))
    if sa <= 0.0 or sb <= 0.0:
        raise ValueError("degenerate residuals: zero variance within pairs")
    r = float(np.corrcoef(a, b)[0, 1])
    return float(np.clip(r, -0.99, 0.99))


def run_test_correlated(ds, kernel, model: CovarianceModel, plan=None,
                        stat: str = "lr-pseudo", **kwargs):
    """Whitened test: identical pipeline with Y and the kernel matrix
    replaced by their whitened counterparts and corrections taken from the
    whitened spectrum."""
    from .pipeline import run_full_test

    return run_full_test(ds, kernel=kernel, plan=plan, stat=stat,
                         sigma_model=model, **kwargs)
