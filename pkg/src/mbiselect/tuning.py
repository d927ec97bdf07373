"""Penalty-grid management and BIC-type model selection.

The score for a fitted coefficient vector is N*log(RSS/N) + df*log(N),
where the residual sum of squares averages each group's squared residuals
over that group's donor views, so incomplete observations contribute
through their imputations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linmod, optimizer
from .errors import FitPathError, InitFailed, MbiError
from .estimating import build_system
from .imputation import ImputationSet
from .optimizer import FitResult
from .patterns import DataSet, PatternIndex


def rss(data: DataSet, idx: PatternIndex, views: ImputationSet, beta) -> tuple[float, dict]:
    """Donor-averaged residual sum of squares, total and per group."""
    beta = np.asarray(beta, dtype=float)
    per_group = {}
    total = 0.0
    for r in range(idx.n_groups):
        group_views = views.views[r]
        y_r = data.response[idx.members[r]]
        acc = 0.0
        for v in group_views:
            resid = y_r - v.values @ beta
            acc += float(resid @ resid)
        acc /= len(group_views)
        per_group[r] = acc
        total += acc
    return total, per_group


def mbi_bic(data: DataSet, idx: PatternIndex, views: ImputationSet,
            fit_result: FitResult) -> float:
    """BIC-type score of one fit; -inf with a warning on degenerate RSS."""
    n = data.n_samples
    total, _ = rss(data, idx, views, fit_result.beta_hat)
    df = fit_result.df
    if total <= 1e-300:
        warnings.warn("degenerate (zero) residual sum of squares", stacklevel=2)
        return -np.inf
    return float(n * np.log(total / n) + df * np.log(n))


@dataclass
class PathResult:
    grid: np.ndarray
    fits: list[FitResult | None]
    bic: np.ndarray
    selected: int
    rss: np.ndarray
    failures: list[tuple[float, str]] = field(default_factory=list)

    @property
    def selected_fit(self) -> FitResult:
        return self.fits[self.selected]

    @property
    def selected_lambda(self) -> float:
        return float(self.grid[self.selected])

    def table_rows(self):
        """(lambda, rss, df, bic, converged, active-set size) per grid point."""
        rows = []
        for i, lam in enumerate(self.grid):
            f = self.fits[i]
            if f is None:
                rows.append((float(lam), np.nan, -1, np.nan, False, -1))
            else:
                rows.append((float(lam), float(self.rss[i]), f.df, float(self.bic[i]),
                             f.converged, f.df))
        return rows


def default_grid(data: DataSet, idx: PatternIndex, n_points: int = 20,
                 ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced increasing grid anchored at the initializer's zeroing level.

    The top of the grid is the smallest penalty at which the lasso on the
    initializing rows (complete cases when available) is identically zero.
    """
    complete = idx.complete_group
    if complete is not None:
        rows = idx.members[complete]
        cols = np.arange(data.n_covariates)
    else:
        r = int(np.argmax(idx.group_sizes))
        rows = idx.members[r]
        cols = idx.observed_sets[r]
    if rows.size == 0:
        raise InitFailed("no rows available to anchor the penalty grid")
    X = data.values[np.ix_(rows, cols)]
    X_std, _, _ = linmod.standardize_columns(X)
    y = data.response[rows]
    lam_max = linmod.lasso_max_lambda(X_std, y - y.mean())
    lam_max = max(lam_max, 1e-8)
    return np.geomspace(lam_max * ratio, lam_max, n_points)


def run_path(data: DataSet, idx: PatternIndex, views: ImputationSet,
             grid=None, *, warm_start: bool = True, seed: int = 0,
             threshold: float = optimizer.DEFAULT_THRESHOLD,
             eps: float = 1e-4, max_iter: int = 500, penalty_a: float = 3.7,
             threads: int = 1) -> PathResult:
    """Fit every grid point, score with the BIC-type criterion, select.

    Fits run in increasing penalty order; with warm starts each fit begins
    at the previous raw solution. Selection is restricted to converged
    fits, ties broken toward the larger penalty (sparser model).
    """
    if grid is None:
        grid = default_grid(data, idx)
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise MbiError("empty penalty grid")

    system = build_system(data, idx, views)
    beta_init = optimizer.initial_beta(data, idx, seed=seed)

    fits: list[FitResult | None] = [None] * grid.size
    failures: list[tuple[float, str]] = []

    def fit_one(i, b0):
        return optimizer.fit(
            data, idx, views, float(grid[i]), system=system, beta0=b0,
            eps=eps, max_iter=max_iter, threshold=threshold,
            penalty_a=penalty_a, seed=seed,
        )

    if warm_start or threads <= 1:
        carry = beta_init
        for i in range(grid.size):
            try:
                res = fit_one(i, carry.copy())
                fits[i] = res
                if warm_start:
                    carry = res.beta_raw
            except MbiError as exc:
                failures.append((float(grid[i]), f"{type(exc).__name__}: {exc}"))
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {i: pool.submit(fit_one, i, beta_init.copy()) for i in range(grid.size)}
        for i, fut in futs.items():
            try:
                fits[i] = fut.result()
            except MbiError as exc:
                failures.append((float(grid[i]), f"{type(exc).__name__}: {exc}"))

    bic = np.full(grid.size, np.nan)
    rss_vals = np.full(grid.size, np.nan)
    for i, f in enumerate(fits):
        if f is None:
            continue
        rss_vals[i], _ = rss(data, idx, views, f.beta_hat)
        bic[i] = mbi_bic(data, idx, views, f)

    usable = [i for i, f in enumerate(fits) if f is not None and f.converged]
    if not usable:
        usable = [i for i, f in enumerate(fits) if f is not None]
    if not usable:
        raise FitPathError("every fit along the penalty grid failed", per_lambda=failures)

    # ties toward the larger penalty: scan downward, strict improvement wins
    selected = usable[-1]
    for i in reversed(usable):
        if bic[i] < bic[selected]:
            selected = i

    return PathResult(grid=grid, fits=fits, bic=bic, selected=int(selected),
                      rss=rss_vals, failures=failures)
