"""Eigendecomposition, SPD square roots, distribution helpers, and the
nonnegative QP."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammainc

from ppt.numerics import (
    QpProblem,
    chi2_cdf,
    chi2_quantile,
    eigendecompose_symmetric,
    f_cdf,
    inverse_sqrt_spd,
    solve_nonneg_qp,
    sqrt_spd,
)


def random_spd(rng, n, ridge=0.5):
    a = rng.standard_normal((n, n))
    return a @ a.T + ridge * np.eye(n)


# ---------------------------------------------------------------------------
# eigendecomposition
# ---------------------------------------------------------------------------


class TestEigendecompose:
    def test_identity(self):
        es = eigendecompose_symmetric(np.eye(2))
        assert np.allclose(es.values, [1.0, 1.0])
        assert np.max(np.abs(es.gamma.T @ es.gamma - np.eye(2))) < 1e-8

    def test_rank_one_constant_matrix(self):
        es = eigendecompose_symmetric(np.ones((2, 2)))
        assert np.allclose(es.values, [2.0, 0.0], atol=1e-12)
        assert es.rank() == 1

    def test_reconstruction_random_spd(self, rng):
        k = random_spd(rng, 5)
        es = eigendecompose_symmetric(k)
        recon = (es.gamma * es.values) @ es.gamma.T
        assert np.max(np.abs(recon - k)) < 1e-8 * es.values[0]

    def test_values_descending_and_clamped(self, rng):
        a = rng.standard_normal((8, 3))
        es = eigendecompose_symmetric(a @ a.T)  # rank 3: five exact zeros
        assert np.all(np.diff(es.values) <= 0.0)
        assert np.all(es.values >= 0.0)
        assert es.rank() == 3

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            eigendecompose_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_indefinite_rejected(self):
        with pytest.raises(ValueError, match="not PSD"):
            eigendecompose_symmetric(np.diag([1.0, -1.0]))

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10**6), st.integers(2, 10))
    def test_orthogonality_and_reconstruction_property(self, seed, n):
        rng = np.random.default_rng(seed)
        k = random_spd(rng, n, ridge=0.01)
        es = eigendecompose_symmetric(k)
        assert np.max(np.abs(es.gamma.T @ es.gamma - np.eye(n))) < 1e-8
        recon = (es.gamma * es.values) @ es.gamma.T
        assert np.max(np.abs(recon - k)) < 1e-8 * max(es.values[0], 1e-300)


# ---------------------------------------------------------------------------
# SPD square roots
# ---------------------------------------------------------------------------


class TestSpdRoots:
    def test_identity(self):
        assert np.allclose(inverse_sqrt_spd(np.eye(3)), np.eye(3), atol=1e-12)

    def test_diagonal(self):
        m = inverse_sqrt_spd(np.diag([4.0, 9.0]))
        assert np.allclose(m, np.diag([0.5, 1.0 / 3.0]), atol=1e-12)

    def test_product_is_identity(self, rng):
        sigma = random_spd(rng, 6)
        m = inverse_sqrt_spd(sigma)
        assert np.max(np.abs(m @ sigma @ m - np.eye(6))) < 1e-8
        assert np.allclose(m, m.T)

    def test_sqrt_and_inverse_sqrt_compose(self, rng):
        sigma = random_spd(rng, 5)
        prod = sqrt_spd(sigma) @ inverse_sqrt_spd(sigma)
        assert np.max(np.abs(prod - np.eye(5))) < 1e-8

    def test_singular_rejected(self):
        with pytest.raises(ValueError, match="SPD"):
            inverse_sqrt_spd(np.diag([1.0, 0.0]))
        with pytest.raises(ValueError, match="SPD"):
            sqrt_spd(np.diag([1.0, -2.0]))


# ---------------------------------------------------------------------------
# chi-square / F helpers
# ---------------------------------------------------------------------------


def chi2_quantile_oracle(df, p):
    """Bisection on the regularized lower incomplete gamma."""
    lo, hi = 0.0, 1.0
    while gammainc(df / 2.0, hi / 2.0) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc(df / 2.0, mid / 2.0) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestChi2:
    def test_df2_closed_form(self):
        # two degrees of freedom: exponential with mean 2
        assert abs(chi2_quantile(2, 0.95) - (-2.0 * math.log(0.05))) < 1e-10

    def test_df1_matches_bisection(self):
        q = chi2_quantile(1, 0.95)
        assert abs(q - chi2_quantile_oracle(1, 0.95)) < 1e-8
        assert abs(q - 3.84146) < 5e-6

    def test_df10_median_matches_bisection(self):
        q = chi2_quantile(10, 0.5)
        assert abs(q - chi2_quantile_oracle(10, 0.5)) < 1e-8
        assert abs(q - 9.34182) < 5e-6

    def test_p_outside_unit_interval_rejected(self):
        for bad in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ValueError):
                chi2_quantile(3, bad)

    def test_cdf_quantile_mutual_inverses(self):
        for df in (1, 2, 5, 10, 25, 50):
            for p in (0.001, 0.1, 0.5, 0.9, 0.999):
                assert abs(chi2_cdf(df, chi2_quantile(df, p)) - p) < 1e-8


class TestFCdf:
    def test_symmetric_point(self):
        # ratio of two iid chi-square(1) variables has median 1
        assert abs(f_cdf(1, 1, 1.0) - 0.5) < 1e-12

    def test_zero_and_negative(self):
        assert f_cdf(3, 7, 0.0) == 0.0
        assert f_cdf(3, 7, -1.0) == 0.0

    def test_monotone_with_limits(self):
        xs = np.linspace(0.0, 50.0, 200)
        vals = [f_cdf(4, 9, float(x)) for x in xs]
        assert np.all(np.diff(vals) >= -1e-15)
        assert vals[-1] > 0.999
        assert f_cdf(4, 9, 1e8) > 1.0 - 1e-6

    def test_matches_monte_carlo(self, rng):
        # simulate F(3, 54) directly from chi-square ratios
        m = 10**6
        draws = (rng.chisquare(3, m) / 3.0) / (rng.chisquare(54, m) / 54.0)
        est = float(np.mean(draws <= 2.0))
        assert abs(f_cdf(3, 54, 2.0) - est) < 5e-3


# ---------------------------------------------------------------------------
# nonnegative QP
# ---------------------------------------------------------------------------


def projected_gradient_oracle(f, q, iters=10**5):
    """Minimize 0.5 x'Fx + q'x over x >= 0 by projected gradient."""
    step = 1.0 / float(np.linalg.eigvalsh(f)[-1])
    x = np.zeros(q.shape[0])
    for _ in range(iters):
        x = np.maximum(x - step * (f @ x + q), 0.0)
    return x


def kkt_violation(f, q, x):
    grad = f @ x + q
    stat = np.max(np.abs(grad[x > 0])) if np.any(x > 0) else 0.0
    dual = max(0.0, -float(np.min(grad[x <= 0]))) if np.any(x <= 0) else 0.0
    return max(float(stat), dual)


class TestNonnegQp:
    def test_interior_minimum(self):
        # (x - 1)^2 with anchor 0: g = 2, curvature 2
        prob = QpProblem(g=np.array([2.0]), curv=np.array([[2.0]]),
                         anchor=np.array([0.0]))
        assert np.allclose(solve_nonneg_qp(prob), [1.0], atol=1e-12)

    def test_active_constraint(self):
        # (x + 1)^2: unconstrained optimum at -1, clipped to 0
        prob = QpProblem(g=np.array([-2.0]), curv=np.array([[2.0]]),
                         anchor=np.array([0.0]))
        assert np.allclose(solve_nonneg_qp(prob), [0.0], atol=1e-12)

    def test_matches_projected_gradient(self, rng):
        for _ in range(3):
            f = random_spd(rng, 4, ridge=1.0)
            g = rng.standard_normal(4) * 2.0
            anchor = np.abs(rng.standard_normal(4))
            x = solve_nonneg_qp(QpProblem(g=g, curv=f, anchor=anchor))
            ref = projected_gradient_oracle(f, -g - f @ anchor)
            assert np.max(np.abs(x - ref)) < 1e-6

    def test_indefinite_rejected(self):
        prob = QpProblem(
            g=np.zeros(2), curv=np.diag([1.0, -1.0]), anchor=np.zeros(2)
        )
        with pytest.raises(ValueError, match="indefinite"):
            solve_nonneg_qp(prob)

    def test_dimension_mismatch_rejected(self):
        prob = QpProblem(g=np.zeros(3), curv=np.eye(2), anchor=np.zeros(2))
        with pytest.raises(ValueError):
            solve_nonneg_qp(prob)

    @settings(deadline=None, max_examples=40)
    @given(st.integers(0, 10**6), st.integers(1, 6))
    def test_complementary_slackness_property(self, seed, j):
        rng = np.random.default_rng(seed)
        f = random_spd(rng, j, ridge=0.3)
        g = rng.standard_normal(j) * 3.0
        anchor = np.maximum(rng.standard_normal(j), 0.0)
        x = solve_nonneg_qp(QpProblem(g=g, curv=f, anchor=anchor))
        assert np.all(x >= 0.0)
        grad = f @ x + (-g - f @ anchor)
        # each coordinate sits at the bound or has a vanishing gradient
        assert np.all((x <= 1e-12) | (np.abs(grad) <= 1e-8))
        assert kkt_violation(f, -g - f @ anchor, x) < 1e-8
