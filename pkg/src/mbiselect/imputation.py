"""Conditional-expectation models and multiple block-wise imputed views.

For each group with a missing block and each of its donor groups, every
missing covariate gets a regression on the group/donor column overlap,
fitted on all rows (from any group) that jointly observe the target and
the overlap. One imputed view of the group is materialized per donor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linmod
from .errors import DimensionMismatch, NoDonorRows, SingularDesign
from .linmod import use_l1_route
from .patterns import DataSet, PatternIndex, pooled_fit_rows


@dataclass(frozen=True)
class ConditionalModel:
    """Fitted conditional expectation E(X_target | X_predictors)."""

    target: int
    predictors: np.ndarray
    family: str                  # "gaussian-identity" or "binomial-logit"
    intercept: float
    coefficients: np.ndarray     # aligned with predictors
    regularized: bool
    pooled_rows: np.ndarray
    binary_levels: tuple[float, float] | None = None  # (low, high) for logit targets

    def predict(self, X_pred: np.ndarray) -> np.ndarray:
        """Conditional expectation for rows of predictor values."""
        if X_pred.shape[1] != self.predictors.size:
            raise DimensionMismatch(
                f"model for column {self.target + 1} expects {self.predictors.size} predictors, "
                f"got {X_pred.shape[1]}"
            )
        eta = self.intercept + X_pred @ self.coefficients
        if self.family == "binomial-logit":
            prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
            lo, hi = self.binary_levels
            return lo + (hi - lo) * prob
        return eta


def _is_binary(x: np.ndarray) -> bool:
    return np.unique(x).size <= 2


def fit_conditional(data: DataSet, idx: PatternIndex, r: int, k: int, j: int,
                    seed: int = 0) -> ConditionalModel:
    """Fit E(X_j | overlap(r, k)) pooled over all qualifying groups.

    Plain least squares (or logit IRLS for binary targets) when the pooled
    sample exceeds the predictor count; otherwise the L1-regularized route.
    A numerically singular unregularized design also falls back to L1.

    Raises
    ------
    NoDonorRows
        If no rows jointly observe the target and the overlap columns.
    """
    j_rk = idx.overlaps[r][k]
    rows = pooled_fit_rows(data, idx, j, j_rk)
    if rows.size == 0:
        raise NoDonorRows(
            f"no rows observe column {j + 1} together with the group {r + 1}/donor {k + 1} overlap"
        )
    X = data.values[np.ix_(rows, j_rk)]
    y = data.values[rows, j]
    binary = _is_binary(y)
    regularized = use_l1_route(rows.size, j_rk.size)
    fit_seed = (seed * 1_000_003 + r * 10_007 + k * 101 + j) & 0x7FFFFFFF

    if binary:
        levels = np.unique(y)
        lo, hi = (float(levels[0]), float(levels[-1]))
        if levels.size == 1:
            return ConditionalModel(j, j_rk, "gaussian-identity", float(lo),
                                    np.zeros(j_rk.size), False, rows)
        y01 = (y == hi).astype(float)
        if regularized:
            b0, coef = linmod.l1_logistic_cv(X, y01, seed=fit_seed)
        else:
            b0, coef = linmod.logistic_irls(X, y01)
        return ConditionalModel(j, j_rk, "binomial-logit", b0, coef, regularized,
                                rows, binary_levels=(lo, hi))

    if not regularized:
        try:
            b0, coef = _gaussian_ls(X, y)
            return ConditionalModel(j, j_rk, "gaussian-identity", b0, coef, False, rows)
        except SingularDesign:
            warnings.warn(
                f"singular design for column {j + 1} (group {r + 1}, donor {k + 1}); "
                "falling back to the L1 route",
                stacklevel=2,
            )
    b0, coef = linmod.lasso_coordinate_descent(X, y, seed=fit_seed)
    return ConditionalModel(j, j_rk, "gaussian-identity", b0, coef, True, rows)


def _gaussian_ls(X, y):
    """Least squares with intercept on internally standardized predictors."""
    X_std, mu, sd = linmod.standardize_columns(X)
    n = X.shape[0]
    y_mean = y.mean()
    A = X_std.T @ X_std / n
    b = X_std.T @ (y - y_mean) / n
    if A.size:
        eigvals = np.linalg.eigvalsh((A + A.T) / 2)
        if eigvals[-1] <= 0 or eigvals[0] / eigvals[-1] < 1e-10:
            raise SingularDesign("reciprocal condition below 1e-10")
        coef_std = np.linalg.solve(A, b)
    else:
        coef_std = np.zeros(0)
    coef = coef_std / sd
    intercept = y_mean - float(mu @ coef)
    return intercept, coef


@dataclass(frozen=True)
class ImputedView:
    """One fully populated view of a group's rows, based on one donor.

    ``values`` covers all p columns over the group's rows: observed entries
    pass through unchanged, missing entries carry model predictions. The
    estimating functions read the donor's observed columns from it.
    """

    group: int
    donor: int
    rows: np.ndarray
    donor_columns: np.ndarray   # a(k)
    values: np.ndarray          # (n_r, p), fully populated


@dataclass(frozen=True)
class ImputationSet:
    """All fitted conditional models and imputed views, keyed by (group, donor)."""

    models: dict[tuple[int, int, int], ConditionalModel]  # (r, k, j) -> model
    views: dict[int, list[ImputedView]]                   # r -> views ordered by donor

    def view(self, r: int, k: int) -> ImputedView:
        for v in self.views[r]:
            if v.donor == k:
                return v
        raise KeyError((r, k))


def fit_all_conditionals(data: DataSet, idx: PatternIndex, seed: int = 0):
    """Fit every (group, donor, missing target) conditional model."""
    models: dict[tuple[int, int, int], ConditionalModel] = {}
    for r in range(idx.n_groups):
        if idx.missing_sets[r].size == 0:
            continue
        for k in idx.donors[r]:
            for j in idx.missing_sets[r]:
                models[(r, k, int(j))] = fit_conditional(data, idx, r, k, int(j), seed=seed)
    return models


def build_views(data: DataSet, idx: PatternIndex, models=None, seed: int = 0) -> ImputationSet:
    """Materialize one imputed view per (group, donor).

    A complete-case group yields a single pass-through view of itself.
    """
    if models is None:
        models = fit_all_conditionals(data, idx, seed=seed)
    views: dict[int, list[ImputedView]] = {}
    for r in range(idx.n_groups):
        rows = idx.members[r]
        group_views = []
        if idx.missing_sets[r].size == 0:
            group_views.append(
                ImputedView(
                    group=r,
                    donor=r,
                    rows=rows,
                    donor_columns=idx.observed_sets[r],
                    values=data.values[rows].copy(),
                )
            )
        else:
            for k in sorted(idx.donors[r]):
                filled = data.values[rows].copy()
                for j in idx.missing_sets[r]:
                    model = models[(r, k, int(j))]
                    X_pred = data.values[np.ix_(rows, model.predictors)]
                    filled[:, j] = model.predict(X_pred)
                if np.isnan(filled).any():
                    raise DimensionMismatch(
                        f"view for group {r + 1}, donor {k + 1} left unfilled entries"
                    )
                group_views.append(
                    ImputedView(
                        group=r,
                        donor=k,
                        rows=rows,
                        donor_columns=idx.observed_sets[k],
                        values=filled,
                    )
                )
        views[r] = group_views
    return ImputationSet(models=models, views=views)


def dump_views_csv(imputations: ImputationSet, out_dir, prefix="view"):
    """Write each (group, donor) view to ``<prefix>_g<r>_d<k>.csv`` (1-based)."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r, group_views in sorted(imputations.views.items()):
        for v in group_views:
            path = out / f"{prefix}_g{r + 1}_d{v.donor + 1}.csv"
            header = "row," + ",".join(f"x{j + 1}" for j in range(v.values.shape[1]))
            body = np.column_stack([v.rows + 1, v.values])
            np.savetxt(path, body, delimiter=",", header=header, comments="", fmt="%.17g")
            paths.append(path)
    return paths
