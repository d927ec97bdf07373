import numpy as np
import pytest

from mbiselect.errors import DimensionMismatch
from mbiselect.estimating import (build_system, moment_vector, weight_block)
from mbiselect.imputation import build_views
from mbiselect.patterns import detect_patterns, make_dataset

from conftest import figure_layout_dataset


def complete_system(n=30, p=3, seed=0, beta=None, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    y = X @ beta + (noise * rng.standard_normal(n) if noise else 0.0)
    data = make_dataset(X, np.ones_like(X, dtype=bool), y, [(0, p)])
    idx = detect_patterns(data)
    views = build_views(data, idx)
    return data, idx, views, build_system(data, idx, views), X, y, beta


def test_complete_group_zero_at_truth_noiseless():
    beta = np.array([1.0, -2.0, 0.5])
    _, _, _, system, _, _, _ = complete_system(beta=beta, noise=0.0)
    g, stack = moment_vector(system, beta, 0)
    assert np.abs(g).max() <= 1e-12
    assert np.abs(stack).max() <= 1e-10


def test_complete_group_matches_direct_formula():
    beta = np.array([0.3, 0.7, -1.1])
    _, _, _, system, X, y, _ = complete_system(beta=np.ones(3), noise=1.0)
    g, stack = moment_vector(system, beta, 0)
    resid = y - X @ beta
    np.testing.assert_allclose(g, X.T @ resid / len(y), atol=1e-12)
    np.testing.assert_allclose(stack, X * resid[:, None], atol=1e-12)


def test_hand_computed_two_sample_moment():
    # 1 covariate, 2 samples: g = mean of x_i (y_i - x_i b)
    X = np.array([[2.0], [3.0]])
    y = np.array([1.0, -1.0])
    data = make_dataset(X, np.ones_like(X, dtype=bool), y, [(0, 1)])
    idx = detect_patterns(data, min_group_size=1)
    system = build_system(data, idx, build_views(data, idx))
    b = np.array([0.5])
    g, stack = moment_vector(system, b, 0)
    # by hand: x1(y1 - 2*0.5) = 2*0 = 0 ; x2(y2 - 3*0.5) = 3*(-2.5) = -7.5
    np.testing.assert_allclose(stack[:, 0], [0.0, -7.5])
    assert g[0] == pytest.approx(-3.75)


def test_group_stack_length_is_sum_of_donor_dims(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    views = build_views(fig_dataset, idx, seed=0)
    system = build_system(fig_dataset, idx, views)
    g1 = system.group(1)
    expected = sum(idx.observed_sets[k].size for k in idx.donors[1])
    assert g1.dim == expected
    assert g1.complete_part_dim == idx.observed_sets[0].size
    gvec, stack = moment_vector(system, np.zeros(fig_dataset.n_covariates), 1)
    assert gvec.size == expected
    assert stack.shape == (idx.group_sizes[1], expected)


def test_weight_block_single_and_duplicated_samples():
    s = np.array([[1.0, 2.0, -1.0]])
    W1 = weight_block(s)
    np.testing.assert_allclose(W1, np.outer(s[0], s[0]))
    # duplicating the sample leaves the mean outer product unchanged
    W2 = weight_block(np.vstack([s, s, s]))
    np.testing.assert_allclose(W2, W1, atol=1e-14)


def test_weight_block_matches_direct_summation():
    rng = np.random.default_rng(4)
    S = rng.standard_normal((3, 5))
    expected = sum(np.outer(S[i], S[i]) for i in range(3)) / 3
    np.testing.assert_allclose(weight_block(S), expected, atol=1e-12)


def test_moment_linearity_in_beta(fitted_toy):
    _, _, _, system, _ = fitted_toy
    rng = np.random.default_rng(5)
    b1 = rng.standard_normal(system.n_covariates)
    b2 = rng.standard_normal(system.n_covariates)
    jac = system.full_jacobian()
    g1, _ = system.aggregate(b1)
    g2, _ = system.aggregate(b2)
    np.testing.assert_allclose(g1 - g2, jac @ (b2 - b1),
                               atol=1e-10 * max(1.0, np.abs(g1).max()))


def test_dense_weight_block_diagonal(fitted_toy):
    _, idx, _, system, beta_true = fitted_toy
    W = system.dense_weight(beta_true)
    at = 0
    dims = [g.dim for g in system.groups]
    for di in dims:
        # everything outside the diagonal blocks is exactly zero
        W_block = W[at:at + di, at:at + di].copy()
        W[at:at + di, at:at + di] = 0.0
        assert np.all(W[at:at + di, :] == 0)
        W[at:at + di, at:at + di] = W_block
        at += di
    # symmetric within blocks
    np.testing.assert_allclose(W, W.T, atol=1e-12)


def test_moment_zero_at_truth_with_exact_expectations():
    """Exact linear dependence + zero noise: every moment vanishes at truth."""
    rng = np.random.default_rng(6)
    n1, n2 = 40, 30
    n = n1 + n2
    A = rng.standard_normal((n, 2))
    X = np.column_stack([A, A[:, 0] - 2.0 * A[:, 1]])  # exact conditional expectation
    beta = np.array([1.0, 0.5, -1.5])
    y = X @ beta
    mask = np.ones((n, 3), dtype=bool)
    mask[n1:, 2] = False
    data = make_dataset(X, mask, y, [(0, 2), (2, 3)])
    idx = detect_patterns(data)
    views = build_views(data, idx)
    system = build_system(data, idx, views)
    g, _ = system.aggregate(beta)
    assert np.abs(g).max() <= 1e-8


def test_monte_carlo_moment_zero_mean():
    """On noisy data each moment coordinate is within 3 MC standard errors of 0."""
    reps = 60
    rng_master = np.random.default_rng(123)
    draws = []
    for rep in range(reps):
        seed = int(rng_master.integers(2**31))
        rng = np.random.default_rng(seed)
        n1, n2 = 60, 60
        n = n1 + n2
        shared = rng.standard_normal((n, 1))
        X = np.sqrt(0.5) * shared + np.sqrt(0.5) * rng.standard_normal((n, 4))
        beta = np.array([1.0, 0.0, 2.0, 0.0])
        y = X @ beta + rng.standard_normal(n)
        mask = np.ones((n, 4), dtype=bool)
        mask[n1:, 2:] = False
        data = make_dataset(X, mask, y, [(0, 2), (2, 4)])
        idx = detect_patterns(data)
        views = build_views(data, idx, seed=seed)
        system = build_system(data, idx, views)
        g, _ = system.aggregate(beta)
        draws.append(g)
    draws = np.array(draws)
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean) <= 3 * se + 1e-12)


def test_dimension_mismatch_detected(fitted_toy):
    data, idx, views, _, _ = fitted_toy
    bad = views.views[1][0]
    object.__setattr__(bad, "donor_columns", bad.donor_columns[:-1])
    with pytest.raises(DimensionMismatch):
        build_system(data, idx, views)
