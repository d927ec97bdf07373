"""Regression building blocks: lasso coordinate descent, logistic IRLS,
and the closed-form SCAD univariate update used by the baselines.

All solvers standardize predictors internally and report coefficients on
the original scale, intercept included.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# An unregularized fit needs a residual-dof margin: at n = p + 1 the
# out-of-sample prediction variance scales like p/(n - p - 1) and explodes,
# which wrecks every quantity downstream of the fitted values.
MIN_RESIDUAL_DOF = 10


def use_l1_route(n_pool: int, n_predictors: int) -> bool:
    """True when a pooled sample is too small for a plain (unpenalized) fit."""
    return n_pool <= n_predictors + MIN_RESIDUAL_DOF


def standardize_columns(X):
    """Center and scale columns; constant columns get scale 1 (stay zero)."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@njit(cache=True)
def _lasso_cd_kernel(X, y, lam, beta, col_var, tol, max_iter):  # pragma: no cover
    n, p = X.shape
    r = y - X @ beta
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            vj = col_var[j]
            if vj == 0.0:
                continue
            old = beta[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * r[i]
            z = z / n + vj * old
            az = abs(z) - lam
            new = (az if az > 0.0 else 0.0) * (1.0 if z > 0 else -1.0) / vj
            if new != old:
                diff = old - new
                for i in range(n):
                    r[i] += X[i, j] * diff
                beta[j] = new
                d = abs(new - old)
                if d > max_delta:
                    max_delta = d
        if max_delta < tol:
            break
    return beta


def lasso_cd_standardized(X, y, lam, beta0=None, tol=1e-7, max_iter=1000):
    """Coordinate descent for (1/2n)||y - Xb||^2 + lam*||b||_1.

    X columns must be standardized (mean 0, variance 1) and y centered.
    """
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    col_var = (X * X).sum(axis=0) / n  # ~1 for standardized columns
    return _lasso_cd_kernel(np.ascontiguousarray(X), np.ascontiguousarray(y),
                            float(lam), beta, col_var, float(tol), int(max_iter))


def lasso_max_lambda(X_std, y_centered):
    """Smallest lam at which the lasso solution is identically zero."""
    n = X_std.shape[0]
    return float(np.max(np.abs(X_std.T @ y_centered)) / n) if X_std.size else 0.0


def default_lambda_grid(lam_max, n_points=50, ratio=1e-3):
    lam_max = max(lam_max, 1e-12)
    return np.geomspace(lam_max, lam_max * ratio, n_points)


def cv_fold_assignment(n, n_folds, seed):
    """Deterministic fold labels in {0..n_folds-1} from a seed."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    return rng.permutation(n) % n_folds


def lasso_coordinate_descent(Xs, ys, lambda_grid=None, folds=10, seed=0):
    """Pathwise lasso with K-fold cross-validated tuning.

    Parameters
    ----------
    Xs : (n, p) array
        Raw predictors; standardized internally over the fitting rows.
    ys : (n,) array
    lambda_grid : array or None
        Decreasing grid; defaults to 50 log-spaced points from the
        all-zero threshold down by 1e-3.
    folds : int
        Number of CV folds (capped at n); fold assignment is derived
        deterministically from ``seed``.

    Returns
    -------
    intercept : float
    coef : (p,) array on the original predictor scale.
    """
    Xs = np.asarray(Xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n, p = Xs.shape
    X_std, mu, sd = standardize_columns(Xs)
    y_mean = ys.mean()
    y_c = ys - y_mean

    if lambda_grid is None:
        lambda_grid = default_lambda_grid(lasso_max_lambda(X_std, y_c))
    lambda_grid = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]

    n_folds = int(min(folds, n))
    if n_folds >= 2 and len(lambda_grid) > 1:
        labels = cv_fold_assignment(n, n_folds, seed)
        cv_err = np.zeros(len(lambda_grid))
        for f in range(n_folds):
            tr, va = labels != f, labels == f
            if va.sum() == 0 or tr.sum() == 0:
                continue
            Xt, m_t, s_t = standardize_columns(Xs[tr])
            yt = ys[tr] - ys[tr].mean()
            Xv = (Xs[va] - m_t) / s_t
            yv = ys[va] - ys[tr].mean()
            b = None
            for li, lam in enumerate(lambda_grid):
                b = lasso_cd_standardized(Xt, yt, lam, beta0=b)
                cv_err[li] += np.sum((yv - Xv @ b) ** 2)
        best = int(np.argmin(cv_err))
        lam_star = lambda_grid[best]
    else:
        lam_star = lambda_grid[-1]

    b = None
    for lam in lambda_grid:
        b = lasso_cd_standardized(X_std, y_c, lam, beta0=b)
        if lam == lam_star:
            break
    coef = b / sd
    intercept = y_mean - float(mu @ coef)
    return intercept, coef


def logistic_irls(X, y, max_iter=50, tol=1e-8, ridge=1e-6):
    """Logit fit of binary y in {0,1} by iteratively reweighted least squares.

    A ridge jitter on the normal equations guards against separation.

    Returns (intercept, coef).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    Xa = np.column_stack([np.ones(n), X])
    beta = np.zeros(p + 1)
    beta[0] = _logit(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    for _ in range(max_iter):
        eta = Xa @ beta
        mu = _sigmoid(eta)
        w = np.clip(mu * (1 - mu), 1e-10, None)
        z = eta + (y - mu) / w
        A = (Xa * w[:, None]).T @ Xa + ridge * np.eye(p + 1)
        new = np.linalg.solve(A, (Xa * w[:, None]).T @ z)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol:
            break
    return float(beta[0]), beta[1:]


def l1_logistic(X, y, lam, max_outer=30, tol=1e-7):
    """L1-penalized logit via IRLS with a weighted lasso inner loop."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    X_std, mu_x, sd_x = standardize_columns(X)
    beta = np.zeros(p)
    b0 = _logit(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    for _ in range(max_outer):
        eta = b0 + X_std @ beta
        mu = _sigmoid(eta)
        w = np.clip(mu * (1 - mu), 1e-6, None)
        z = eta + (y - mu) / w
        old = beta.copy()
        b0, beta = _weighted_lasso_cd(X_std, z, w, lam, beta, b0)
        if np.max(np.abs(beta - old)) < tol:
            break
    coef = beta / sd_x
    intercept = b0 - float(mu_x @ coef)
    return intercept, coef


@njit(cache=True)
def _weighted_lasso_cd_kernel(X, z, w, lam, beta, b0, tol, max_iter):  # pragma: no cover
    n, p = X.shape
    wsum = w.sum()
    r = z - b0 - X @ beta
    col_var = np.empty(p)
    for j in range(p):
        v = 0.0
        for i in range(n):
            v += w[i] * X[i, j] * X[i, j]
        col_var[j] = v / n
    for _ in range(max_iter):
        max_delta = 0.0
        shift = 0.0
        for i in range(n):
            shift += w[i] * r[i]
        shift /= wsum
        for i in range(n):
            r[i] -= shift
        b0 += shift
        for j in range(p):
            vj = col_var[j]
            if vj == 0.0:
                continue
            old = beta[j]
            zj = 0.0
            for i in range(n):
                zj += w[i] * X[i, j] * r[i]
            zj = zj / n + vj * old
            az = abs(zj) - lam
            new = (az if az > 0.0 else 0.0) * (1.0 if zj > 0 else -1.0) / vj
            if new != old:
                diff = old - new
                for i in range(n):
                    r[i] += X[i, j] * diff
                beta[j] = new
                d = abs(new - old)
                if d > max_delta:
                    max_delta = d
        if max_delta < tol:
            break
    return b0


def _weighted_lasso_cd(X, z, w, lam, beta, b0, max_iter=200, tol=1e-8):
    b0 = _weighted_lasso_cd_kernel(np.ascontiguousarray(X), np.ascontiguousarray(z),
                                   np.ascontiguousarray(w), float(lam), beta,
                                   float(b0), float(tol), int(max_iter))
    return b0, beta


def l1_logistic_cv(X, y, n_lambdas=12, folds=5, seed=0):
    """Deviance-CV tuned L1 logit; returns (intercept, coef)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    X_std, _, _ = standardize_columns(X)
    p_bar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    lam_max = float(np.max(np.abs(X_std.T @ (y - p_bar))) / n) if X.size else 1e-3
    grid = default_lambda_grid(max(lam_max, 1e-8), n_points=n_lambdas, ratio=1e-2)

    n_folds = int(min(folds, n))
    if n_folds >= 2:
        labels = cv_fold_assignment(n, n_folds, seed)
        dev = np.zeros(len(grid))
        for f in range(n_folds):
            tr, va = labels != f, labels == f
            if va.sum() == 0 or tr.sum() == 0 or len(np.unique(y[tr])) < 2:
                continue
            for li, lam in enumerate(grid):
                b0, b = l1_logistic(X[tr], y[tr], lam)
                eta = np.clip(b0 + X[va] @ b, -30, 30)
                mu = _sigmoid(eta)
                dev[li] += -2 * np.sum(y[va] * np.log(mu + 1e-12) + (1 - y[va]) * np.log(1 - mu + 1e-12))
        lam_star = grid[int(np.argmin(dev))]
    else:
        lam_star = grid[-1]
    return l1_logistic(X, y, lam_star)


def scad_threshold(z, lam, a=3.7):
    """Closed-form minimizer of (1/2)(z - b)^2 + SCAD penalty at (lam, a)."""
    az = abs(z)
    if az <= 2.0 * lam:
        return float(soft_threshold(z, lam))
    if az <= a * lam:
        return float(((a - 1.0) * z - np.sign(z) * a * lam) / (a - 2.0))
    return float(z)


@njit(cache=True)
def _scad_cd_kernel(X, y, lam, a, beta, live, tol, max_iter):  # pragma: no cover
    n, p = X.shape
    r = y - X @ beta
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            if not live[j]:
                continue
            old = beta[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * r[i]
            z = z / n + old
            az = abs(z)
            sgn = 1.0 if z > 0 else -1.0
            if az <= 2.0 * lam:
                s = az - lam
                new = sgn * (s if s > 0.0 else 0.0)
            elif az <= a * lam:
                new = ((a - 1.0) * z - sgn * a * lam) / (a - 2.0)
            else:
                new = z
            if new != old:
                diff = old - new
                for i in range(n):
                    r[i] += X[i, j] * diff
                beta[j] = new
                d = abs(new - old)
                if d > max_delta:
                    max_delta = d
        if max_delta < tol:
            break
    return beta


def scad_cd(X, y, lam, a=3.7, beta0=None, tol=1e-7, max_iter=1000):
    """SCAD-penalized least squares by coordinate descent.

    X columns must be standardized (unit variance: the closed-form SCAD
    threshold rule assumes a unit quadratic coefficient) and y centered.
    Each coordinate update applies the closed-form SCAD threshold rule.
    """
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    live = (X * X).sum(axis=0) > 0
    return _scad_cd_kernel(np.ascontiguousarray(X), np.ascontiguousarray(y),
                           float(lam), float(a), beta, live, float(tol),
                           int(max_iter))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _logit(p):
    return float(np.log(p / (1.0 - p)))
