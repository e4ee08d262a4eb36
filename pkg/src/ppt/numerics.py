"""Shared numerical kernel: symmetric eigendecompositions, SPD inverse square
roots, chi-square / F distribution helpers, and the small nonnegativity-
constrained quadratic program used by the Fisher-scoring fitter.

Everything here is a pure function of its arguments and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _sstats

# Relative cutoff used everywhere a numerical rank is needed: an eigenvalue or
# singular value counts only if it exceeds RANK_RTOL times the largest one.
RANK_RTOL = 1e-10

# Eigenvalues of a nominally PSD matrix may come out slightly negative; values
# above -PSD_RTOL * c_max are clamped to zero, anything lower is an error.
PSD_RTOL = 1e-8


@dataclass(frozen=True)
class EigenSystem:
    """Orthogonal eigenvectors and descending, zero-clamped eigenvalues.

    Attributes
    ----------
    gamma : ndarray, shape (n, n)
        Orthogonal matrix whose columns are eigenvectors, ordered to match
        ``values``.
    values : ndarray, shape (n,)
        Eigenvalues sorted in descending order, small negatives clamped to 0.
    """

    gamma: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def rank(self) -> int:
        """Numerical rank: eigenvalues above RANK_RTOL times the largest."""
        if self.values[0] <= 0.0:
            return 0
        return int(np.sum(self.values > RANK_RTOL * self.values[0]))


def _check_square_symmetric(a: np.ndarray, tol: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (a + a.T)


def eigendecompose_symmetric(k: np.ndarray) -> EigenSystem:
    """Eigendecompose a symmetric PSD matrix into descending order.

    Parameters
    ----------
    k : ndarray, shape (n, n)
        Symmetric matrix (asymmetry above 1e-10 relative is rejected).

    Returns
    -------
    EigenSystem
        Satisfies gamma @ diag(values) @ gamma.T == k within 1e-8 * values[0].

    Raises
    ------
    ValueError
        If the input is asymmetric, or an eigenvalue falls below
        -1e-8 times the largest (matrix not PSD).
    """
    k = _check_square_symmetric(k, 1e-10)
    w, v = np.linalg.eigh(k)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    c1 = max(w[0], 0.0)
    if np.any(w < -PSD_RTOL * max(c1, 1e-300)):
        raise ValueError(
            f"matrix not PSD: eigenvalue {w.min():.3e} below -{PSD_RTOL:g} * {c1:.3e}"
        )
    np.clip(w, 0.0, None, out=w)
    w.setflags(write=False)
    v.setflags(write=False)
    return EigenSystem(gamma=v, values=w)


def inverse_sqrt_spd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric inverse square root M of an SPD matrix: M @ sigma @ M == I.

    The smallest eigenvalue must exceed 1e-12 times the largest.
    """
    sigma = _check_square_symmetric(sigma, 1e-10)
    w, v = np.linalg.eigh(sigma)
    if w[-1] <= 0.0 or w[0] <= 1e-12 * w[-1]:
        raise ValueError(
            f"matrix not SPD: eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    m = (v * (1.0 / np.sqrt(w))) @ v.T
    return 0.5 * (m + m.T)


def sqrt_spd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix (companion to inverse_sqrt_spd)."""
    sigma = _check_square_symmetric(sigma, 1e-10)
    w, v = np.linalg.eigh(sigma)
    if w[-1] <= 0.0 or w[0] <= 1e-12 * w[-1]:
        raise ValueError(
            f"matrix not SPD: eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]"
        )
    m = (v * np.sqrt(w)) @ v.T
    return 0.5 * (m + m.T)


# ---------------------------------------------------------------------------
# distribution helpers
# ---------------------------------------------------------------------------

def chi2_cdf(df: int, x: float) -> float:
    """Chi-square CDF with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("df must be a positive integer")
    return float(_sstats.chi2.cdf(x, df))


def chi2_quantile(df: int, p: float) -> float:
    """Chi-square quantile function; inverse of chi2_cdf in p."""
    if df < 1:
        raise ValueError("df must be a positive integer")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly inside (0, 1), got {p}")
    return float(_sstats.chi2.ppf(p, df))


def f_cdf(d1: int, d2: int, x: float) -> float:
    """F distribution CDF with (d1, d2) degrees of freedom; 0 for x <= 0."""
    if d1 < 1 or d2 < 1:
        raise ValueError("degrees of freedom must be positive integers")
    if x <= 0.0:
        return 0.0
    return float(_sstats.f.cdf(x, d1, d2))


# ---------------------------------------------------------------------------
# nonnegativity-constrained quadratic program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QpProblem:
    """One Fisher-scoring step as a QP.

    Minimize (-g)' (x - anchor) + 0.5 (x - anchor)' curv (x - anchor)
    subject to x >= 0, where ``g`` is the score (gradient of the
    log-likelihood) and ``curv`` the expected negative Hessian.
    """

    g: np.ndarray
    curv: np.ndarray
    anchor: np.ndarray


def solve_nonneg_qp(prob: QpProblem, kkt_tol: float = 1e-10) -> np.ndarray:
    """Solve the nonnegativity-constrained QP with a primal active-set method.

    Returns the minimizer x >= 0. A fixed 1e-12 ridge is added to the
    curvature matrix when its smallest eigenvalue is below 1e-12 times its
    trace. Raises ValueError if the curvature is indefinite beyond tolerance
    or if the KKT residual cannot be driven below ``kkt_tol``.
    """
    g = np.asarray(prob.g, dtype=float).ravel()
    anchor = np.asarray(prob.anchor, dtype=float).ravel()
    f = _check_square_symmetric(prob.curv, 1e-8)
    j = g.shape[0]
    if f.shape[0] != j or anchor.shape[0] != j:
        raise ValueError("QP dimensions disagree")

    ew = np.linalg.eigvalsh(f)
    tr = float(np.trace(f))
    if ew[0] < -1e-8 * max(abs(tr), 1.0):
        raise ValueError(f"curvature matrix indefinite (eigenvalue {ew[0]:.3e})")
    if ew[0] < 1e-12 * max(tr, 1.0):
        f = f + 1e-12 * max(tr, 1.0) * np.eye(j)

    # Minimize 0.5 x'Fx + q'x  s.t. x >= 0, where q = -g - F @ anchor.
    q = -g - f @ anchor

    x = np.maximum(anchor, 0.0)
    free = x > 0.0

    def _solve_free(mask: np.ndarray) -> np.ndarray:
        out = np.zeros(j)
        if mask.any():
            out[mask] = np.linalg.solve(f[np.ix_(mask, mask)], -q[mask])
        return out

    for _ in range(8 * (j + 1) * (j + 1)):
        xt = _solve_free(free)
        if np.all(xt[free] >= -1e-14):
            x = np.where(free, np.maximum(xt, 0.0), 0.0)
            grad = f @ x + q
            bound = ~free
            if not bound.any() or np.all(grad[bound] >= -kkt_tol):
                resid = _kkt_residual(x, grad)
                if resid > kkt_tol:
                    raise ValueError(f"QP stalled with KKT residual {resid:.3e}")
                return x
            # release the most violated bound constraint
            k = int(np.argmin(np.where(bound, grad, np.inf)))
            free[k] = True
            continue
        # step from x toward xt until the first coordinate hits zero
        d = xt - x
        neg = free & (d < 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(neg, -x / d, np.inf)
        k = int(np.argmin(ratios))
        alpha = min(1.0, float(ratios[k]))
        x = np.maximum(x + alpha * d, 0.0)
        if alpha < 1.0:
            free[k] = False
            x[k] = 0.0
    raise ValueError("QP active-set iteration budget exhausted")


def _kkt_residual(x: np.ndarray, grad: np.ndarray) -> float:
    """Max violation of stationarity / complementary slackness / dual sign."""
    stat = np.max(np.abs(grad[x > 0.0])) if np.any(x > 0.0) else 0.0
    dual = max(0.0, -np.min(grad[x <= 0.0])) if np.any(x <= 0.0) else 0.0
    comp = float(np.max(np.abs(x * grad))) if x.size else 0.0
    return max(float(stat), float(dual), comp)
