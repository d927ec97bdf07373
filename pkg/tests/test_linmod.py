import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbiselect import linmod


def orthonormal_design(n, p, seed=0):
    """Columns orthogonal with exact unit variance (n-normalized)."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return q[:, :p] * np.sqrt(n)


def test_lasso_all_zero_at_huge_lambda():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 6))
    y = X @ np.array([1.0, -2.0, 0, 0, 3.0, 0]) + rng.standard_normal(40)
    _, coef = linmod.lasso_coordinate_descent(X, y, lambda_grid=[1e6])
    assert np.all(coef == 0)


def test_lasso_orthonormal_matches_soft_threshold():
    n, p = 64, 5
    X = orthonormal_design(n, p, seed=1)
    rng = np.random.default_rng(2)
    beta = np.array([2.0, -1.0, 0.5, 0.0, 0.0])
    y = X @ beta + 0.1 * rng.standard_normal(n)
    lam = 0.6
    y_c = y - y.mean()
    b = linmod.lasso_cd_standardized(X, y_c, lam)
    ols = X.T @ y_c / n
    expected = linmod.soft_threshold(ols, lam)
    np.testing.assert_allclose(b, expected, atol=1e-8)


def brute_force_lasso(X, y, lam, span=4.0, steps=161):
    """Grid minimization of the lasso objective for p = 2."""
    n = X.shape[0]
    grid = np.linspace(-span, span, steps)
    best, best_val = None, np.inf
    for b1, b2 in itertools.product(grid, grid):
        b = np.array([b1, b2])
        val = 0.5 * np.sum((y - X @ b) ** 2) / n + lam * np.abs(b).sum()
        if val < best_val:
            best, best_val = b, val
    return best, best_val


def test_lasso_p2_matches_brute_force_objective():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 2))
    X = (X - X.mean(0)) / X.std(0)
    y = X @ np.array([1.5, -0.5]) + 0.2 * rng.standard_normal(30)
    y = y - y.mean()
    lam = 0.3
    b = linmod.lasso_cd_standardized(X, y, lam, tol=1e-12, max_iter=20000)
    n = X.shape[0]
    val_cd = 0.5 * np.sum((y - X @ b) ** 2) / n + lam * np.abs(b).sum()
    # refine the brute-force grid around the coarse minimizer
    coarse, _ = brute_force_lasso(X, y, lam)
    grid1 = np.linspace(coarse[0] - 0.1, coarse[0] + 0.1, 201)
    grid2 = np.linspace(coarse[1] - 0.1, coarse[1] + 0.1, 201)
    best_val = min(
        0.5 * np.sum((y - X @ np.array([b1, b2])) ** 2) / n + lam * (abs(b1) + abs(b2))
        for b1 in grid1 for b2 in grid2
    )
    assert val_cd <= best_val + 1e-6


def test_lasso_cv_recovers_signal_original_scale():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((200, 5)) * np.array([1.0, 10.0, 0.1, 1.0, 1.0])
    beta = np.array([2.0, -0.3, 5.0, 0.0, 0.0])
    y = 1.5 + X @ beta + 0.05 * rng.standard_normal(200)
    b0, coef = linmod.lasso_coordinate_descent(X, y, seed=0)
    np.testing.assert_allclose(coef, beta, atol=0.05)
    assert abs(b0 - 1.5) < 0.1


def test_lasso_cv_folds_deterministic():
    a = linmod.cv_fold_assignment(50, 10, seed=5)
    b = linmod.cv_fold_assignment(50, 10, seed=5)
    c = linmod.cv_fold_assignment(50, 10, seed=6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_logistic_irls_separable_and_simple():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((300, 2))
    true = np.array([2.0, -1.0])
    p = 1 / (1 + np.exp(-(0.3 + X @ true)))
    y = (rng.uniform(size=300) < p).astype(float)
    b0, coef = linmod.logistic_irls(X, y)
    assert abs(b0 - 0.3) < 0.4
    np.testing.assert_allclose(coef, true, atol=0.5)
    # perfectly separated data must still return finite coefficients
    Xs = np.linspace(-1, 1, 20)[:, None]
    ys = (Xs[:, 0] > 0).astype(float)
    b0s, coefs = linmod.logistic_irls(Xs, ys)
    assert np.isfinite(b0s) and np.all(np.isfinite(coefs))


def test_l1_logistic_shrinks_and_fits():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((200, 4))
    eta = 1.2 * X[:, 0]
    y = (rng.uniform(size=200) < 1 / (1 + np.exp(-eta))).astype(float)
    _, coef_big = linmod.l1_logistic(X, y, lam=1.0)
    assert np.all(coef_big == 0)
    _, coef = linmod.l1_logistic(X, y, lam=0.01)
    assert coef[0] > 0.3
    assert np.abs(coef[1:]).max() < 0.3


def test_scad_threshold_closed_form_values():
    lam, a = 1.0, 3.7
    # soft-threshold regime
    assert linmod.scad_threshold(1.5, lam, a) == pytest.approx(0.5, abs=1e-12)
    # flat regime returns the input
    assert linmod.scad_threshold(5.0, lam, a) == pytest.approx(5.0, abs=1e-12)
    # middle regime
    z = 3.0
    expected = ((a - 1) * z - a * lam) / (a - 2)
    assert linmod.scad_threshold(z, lam, a) == pytest.approx(expected, abs=1e-12)
    assert linmod.scad_threshold(-z, lam, a) == pytest.approx(-expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-8, 8), st.floats(0.05, 2.0))
def test_scad_threshold_minimizes_univariate_objective(z, lam):
    """The closed-form rule beats a fine grid on (1/2)(z-b)^2 + scad(|b|)."""
    from mbiselect.optimizer import PenaltySpec, scad

    a = 3.7
    spec = PenaltySpec(lam=lam, a=a)
    b_star = linmod.scad_threshold(z, lam, a)

    def objective(b):
        return 0.5 * (z - b) ** 2 + scad(abs(b), spec)

    grid = np.linspace(-9, 9, 2001)
    assert objective(b_star) <= np.min([objective(b) for b in grid]) + 1e-10


def test_scad_cd_orthonormal_matches_threshold_rule():
    n, p = 100, 4
    X = orthonormal_design(n, p, seed=8)
    rng = np.random.default_rng(9)
    y = X @ np.array([3.0, 0.8, -1.5, 0.0]) + 0.3 * rng.standard_normal(n)
    y_c = y - y.mean()
    lam = 0.5
    b = linmod.scad_cd(X, y_c, lam, tol=1e-14, max_iter=5000)
    ols = X.T @ y_c / n
    expected = np.array([linmod.scad_threshold(z, lam) for z in ols])
    np.testing.assert_allclose(b, expected, atol=1e-10)


def test_scad_cd_null_at_huge_lambda():
    rng = np.random.default_rng(10)
    X, _, _ = linmod.standardize_columns(rng.standard_normal((50, 6)))
    y = rng.standard_normal(50)
    b = linmod.scad_cd(X, y - y.mean(), lam=1e4)
    assert np.all(b == 0)


def test_use_l1_route_boundary():
    assert linmod.use_l1_route(50, 80)
    assert linmod.use_l1_route(80 + linmod.MIN_RESIDUAL_DOF, 80)
    assert not linmod.use_l1_route(80 + linmod.MIN_RESIDUAL_DOF + 1, 80)


def test_standardize_constant_column():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    X_std, mu, sd = linmod.standardize_columns(X)
    assert np.all(X_std[:, 0] == 0)
    assert sd[0] == 1.0
