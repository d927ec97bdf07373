"""Benchmark settings: data generation, missingness assignment, baselines,
and replication drivers reporting selection error rates.

Covariates are exchangeable-correlation Gaussian (optionally sign-coded in
the first source), the response is linear with unit noise, and group
membership is either uniform or weighted by exp(-a_i) for the setting's
informativeness score a_i.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import linmod, tuning
from .errors import InvalidRho, MbiError, NoCompleteGroup
from .imputation import build_views
from .patterns import DataSet, detect_patterns, make_dataset

FIG_LAYOUT_3 = ((True, True, True), (True, True, False), (True, False, True),
                (False, True, True))


@dataclass(frozen=True)
class SettingSpec:
    id: int
    n_samples: int
    n_covariates: int
    q: int
    n_groups: int
    n_sources: int
    group_sizes: tuple[int, ...]
    source_sizes: tuple[int, ...]
    signals: tuple[float, ...]
    relevant_per_source: tuple[int, ...]
    rho: float
    mechanism: str                      # "mcar" | "mar" | "informative"
    weight_kind: str                    # "none" | "last_source" | "source1_y" | "response"
    signatures: tuple[tuple[bool, ...], ...]
    binary_first_source: bool = False
    covariance: str = "exchangeable"
    replications: int = 50
    seed: int = 0

    def __post_init__(self):
        if sum(self.source_sizes) != self.n_covariates:
            raise ValueError("source sizes must sum to the covariate count")
        if sum(self.group_sizes) != self.n_samples:
            raise ValueError("group sizes must sum to the sample count")
        if sum(self.relevant_per_source) != self.q:
            raise ValueError("relevant counts must sum to q")
        if not (-1.0 / (self.n_covariates - 1) < self.rho < 1.0):
            raise InvalidRho(f"rho {self.rho} outside the positive-definite range")
        if self.covariance != "exchangeable":
            raise NotImplementedError("only the exchangeable covariance is supported")

    @property
    def source_spans(self) -> tuple[tuple[int, int], ...]:
        spans, at = [], 0
        for size in self.source_sizes:
            spans.append((at, at + size))
            at += size
        return tuple(spans)

    def true_beta(self) -> np.ndarray:
        beta = np.zeros(self.n_covariates)
        for (lo, _hi), k, sig in zip(self.source_spans, self.relevant_per_source, self.signals):
            beta[lo:lo + k] = sig
        return beta


def make_setting(setting_id: int, rho: float | None = None, replications: int = 50,
                 seed: int = 0) -> SettingSpec:
    """Preset benchmark configurations 1 through 6."""
    common = dict(replications=replications, seed=seed)
    if setting_id == 1:
        return SettingSpec(
            id=1, n_samples=700, n_covariates=40, q=14, n_groups=4, n_sources=4,
            group_sizes=(30, 220, 220, 230), source_sizes=(12, 12, 12, 4),
            signals=(5, 6, 7, 8), relevant_per_source=(4, 4, 4, 2),
            rho=0.7 if rho is None else rho, mechanism="mar", weight_kind="last_source",
            signatures=((True,) * 4,
                        (True, True, False, True),
                        (True, False, True, True),
                        (False, True, True, True)),
            **common,
        )
    if setting_id == 2:
        return SettingSpec(
            id=2, n_samples=500, n_covariates=1000, q=20, n_groups=4, n_sources=3,
            group_sizes=(180, 120, 100, 100), source_sizes=(75, 100, 825),
            signals=(6, 5, 4), relevant_per_source=(6, 6, 8),
            rho=0.5 if rho is None else rho, mechanism="mcar", weight_kind="none",
            signatures=FIG_LAYOUT_3,
            **common,
        )
    if setting_id == 3:
        return SettingSpec(
            id=3, n_samples=250, n_covariates=60, q=15, n_groups=4, n_sources=3,
            group_sizes=(45, 45, 80, 80), source_sizes=(20, 20, 20),
            signals=(2.5, 3, 3.5), relevant_per_source=(5, 5, 5),
            rho=0.6 if rho is None else rho, mechanism="informative",
            weight_kind="source1_y", signatures=FIG_LAYOUT_3,
            **common,
        )
    if setting_id == 4:
        return SettingSpec(
            id=4, n_samples=700, n_covariates=60, q=15, n_groups=4, n_sources=3,
            group_sizes=(45, 265, 265, 125), source_sizes=(20, 20, 20),
            signals=(7, 8, 10), relevant_per_source=(2, 6, 7),
            rho=0.7 if rho is None else rho, mechanism="informative",
            weight_kind="response", signatures=FIG_LAYOUT_3,
            binary_first_source=True,
            **common,
        )
    if setting_id == 5:
        return SettingSpec(
            id=5, n_samples=300, n_covariates=60, q=15, n_groups=3, n_sources=3,
            group_sizes=(100, 100, 100), source_sizes=(20, 20, 20),
            signals=(0.8, 1, 1.5), relevant_per_source=(5, 5, 5),
            rho=0.5 if rho is None else rho, mechanism="mcar", weight_kind="none",
            signatures=FIG_LAYOUT_3[1:],
            **common,
        )
    if setting_id == 6:
        return SettingSpec(
            id=6, n_samples=800, n_covariates=40, q=14, n_groups=4, n_sources=4,
            group_sizes=(200, 200, 200, 200), source_sizes=(12, 12, 12, 4),
            signals=(5, 6, 7, 8), relevant_per_source=(4, 4, 4, 2),
            rho=0.7 if rho is None else rho, mechanism="mcar", weight_kind="none",
            signatures=((True,) * 4,
                        (True, True, False, True),
                        (True, False, True, True),
                        (False, True, True, True)),
            **common,
        )
    raise ValueError(f"unknown setting {setting_id}")


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)).generate_state(1)[0])


def gen_data(spec: SettingSpec, seed: int):
    """Deterministic (X, y, true beta) draw for the setting.

    The exchangeable covariance is sampled as a shared factor plus noise
    for nonnegative correlation, by a Cholesky factor otherwise.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    n, p, rho = spec.n_samples, spec.n_covariates, spec.rho
    if rho == 0.0:
        X = rng.standard_normal((n, p))
    elif rho > 0:
        shared = rng.standard_normal((n, 1))
        X = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * rng.standard_normal((n, p))
    else:
        cov = np.full((p, p), rho)
        np.fill_diagonal(cov, 1.0)
        X = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
    if spec.binary_first_source:
        lo, hi = spec.source_spans[0]
        X[:, lo:hi] = np.where(X[:, lo:hi] >= 0, 1.0, -1.0)
    beta = spec.true_beta()
    y = X @ beta + rng.standard_normal(n)
    return X, y, beta


def _informativeness(spec: SettingSpec, X, y):
    if spec.weight_kind == "last_source":
        lo, hi = spec.source_spans[-1]
        return 10.0 * X[:, lo:hi].sum(axis=1)
    if spec.weight_kind == "source1_y":
        return 3.0 * (X[:, :5].sum(axis=1) + y)
    if spec.weight_kind == "response":
        return 10.0 * y
    raise ValueError(f"no informativeness score for weight kind {spec.weight_kind!r}")


def assign_missing(spec: SettingSpec, X, y, seed: int):
    """Observation mask from the setting's group layout.

    Weighted mechanisms draw the complete group as a weighted sample
    without replacement (weights exp(-a_i)); everything else is a uniform
    partition matching the group sizes.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
    n = spec.n_samples
    sizes = spec.group_sizes
    if spec.mechanism == "mcar":
        perm = rng.permutation(n)
        groups = []
        at = 0
        for size in sizes:
            groups.append(np.sort(perm[at:at + size]))
            at += size
    else:
        a = _informativeness(spec, X, y)
        w = np.exp(-(a - a.min()))
        w = w / w.sum()
        complete = np.sort(rng.choice(n, size=sizes[0], replace=False, p=w))
        rest = np.setdiff1d(np.arange(n), complete)
        perm = rng.permutation(rest)
        groups = [complete]
        at = 0
        for size in sizes[1:]:
            groups.append(np.sort(perm[at:at + size]))
            at += size

    mask = np.zeros((n, spec.n_covariates), dtype=bool)
    for g, rows in enumerate(groups):
        for s, observed in enumerate(spec.signatures[g]):
            if observed:
                lo, hi = spec.source_spans[s]
                mask[np.ix_(rows, np.arange(lo, hi))] = True
    return mask, groups


def make_replication(spec: SettingSpec, rep: int):
    """(DataSet, true beta, replication seed) for one replication index."""
    seed = _rep_seed(spec.seed, rep)
    X, y, beta = gen_data(spec, seed)
    mask, _ = assign_missing(spec, X, y, seed)
    data = make_dataset(X, mask, y, spec.source_spans)
    return data, beta, seed


def metrics(beta_hat, beta_true) -> dict:
    """False negative/positive rates of the selected support plus MSE."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_hat.shape != beta_true.shape:
        raise ValueError("coefficient vectors must have equal length")
    relevant = beta_true != 0
    irrelevant = ~relevant
    selected = beta_hat != 0
    fnr = float(np.sum(~selected & relevant) / relevant.sum()) if relevant.any() else 0.0
    fpr = float(np.sum(selected & irrelevant) / irrelevant.sum()) if irrelevant.any() else 0.0
    mse = float(np.sum((beta_hat - beta_true) ** 2) / beta_true.size)
    return {"fnr": fnr, "fpr": fpr, "fnr_plus_fpr": fnr + fpr, "mse": mse}


@dataclass
class SimpleFit:
    """Penalized least-squares baseline result."""

    beta: np.ndarray
    intercept: float
    lam: float
    bic: float
    df: int
    path: list = field(default_factory=list)


def _scad_bic_path(X, y, grid=None, a=3.7):
    """SCAD coordinate-descent path on (X, y), tuned by BIC.

    Selection excludes saturated fits (df > n/2), whose residual sum of
    squares collapses and makes the BIC vacuous when p approaches n.
    """
    n = X.shape[0]
    X_std, mu, sd = linmod.standardize_columns(X)
    y_mean = y.mean()
    y_c = y - y_mean
    if grid is None:
        lam_max = max(linmod.lasso_max_lambda(X_std, y_c), 1e-8)
        grid = np.geomspace(lam_max * 1e-3, lam_max, 20)
    grid = np.sort(np.asarray(grid, dtype=float))

    df_cap = max(1, n // 2)
    best = None
    fallback = None
    carry = None
    path = []
    for lam in grid:
        b = linmod.scad_cd(X_std, y_c, lam, a=a, beta0=carry)
        carry = b
        resid = y_c - X_std @ b
        rss_v = float(resid @ resid)
        df = int(np.count_nonzero(b))
        bic = n * np.log(max(rss_v, 1e-300) / n) + df * np.log(n)
        path.append((float(lam), rss_v, df, float(bic)))
        if fallback is None or bic <= fallback[0]:
            fallback = (bic, lam, b.copy(), df)
        if df <= df_cap and (best is None or bic <= best[0]):  # ties toward larger penalty
            best = (bic, lam, b.copy(), df)
    bic, lam, b_std, df = best if best is not None else fallback
    beta = b_std / sd
    intercept = y_mean - float(mu @ beta)
    return SimpleFit(beta=beta, intercept=intercept, lam=float(lam), bic=float(bic),
                     df=df, path=path)


def baseline_cc_scad(data: DataSet, idx, grid=None, a=3.7) -> SimpleFit:
    """SCAD-penalized least squares on the complete cases only."""
    complete = idx.complete_group
    if complete is None:
        raise NoCompleteGroup("complete-case baseline needs complete observations")
    rows = idx.members[complete]
    return _scad_bic_path(data.values[rows], data.response[rows], grid=grid, a=a)


def single_imputation_matrix(data: DataSet, idx) -> np.ndarray:
    """Complete the design by regressing each missing block on the group's
    observed columns using complete cases only."""
    complete = idx.complete_group
    if complete is None:
        raise NoCompleteGroup("single imputation needs complete observations")
    c_rows = idx.members[complete]
    filled = data.values.copy()
    for r in range(idx.n_groups):
        miss = idx.missing_sets[r]
        if miss.size == 0:
            continue
        rows = idx.members[r]
        pred_cols = idx.observed_sets[r]
        Xc = data.values[np.ix_(c_rows, pred_cols)]
        Xr = data.values[np.ix_(rows, pred_cols)]
        for j in miss:
            yc = data.values[c_rows, j]
            binary = np.unique(yc).size <= 2
            if binary and np.unique(yc).size == 2:
                levels = np.unique(yc)
                b0, coef = linmod.logistic_irls(Xc, (yc == levels[-1]).astype(float))
                eta = b0 + Xr @ coef
                prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
                filled[rows, j] = levels[0] + (levels[-1] - levels[0]) * prob
            elif not linmod.use_l1_route(c_rows.size, pred_cols.size):
                try:
                    b0, coef = _plain_ls(Xc, yc)
                except np.linalg.LinAlgError:
                    b0, coef = linmod.lasso_coordinate_descent(Xc, yc)
                filled[rows, j] = b0 + Xr @ coef
            else:
                b0, coef = linmod.lasso_coordinate_descent(Xc, yc)
                filled[rows, j] = b0 + Xr @ coef
    return filled


def _plain_ls(X, y):
    X_std, mu, sd = linmod.standardize_columns(X)
    n = X.shape[0]
    A = X_std.T @ X_std / n
    rhs = X_std.T @ (y - y.mean()) / n
    coef_std = np.linalg.solve(A, rhs)
    coef = coef_std / sd
    return float(y.mean() - mu @ coef), coef


def baseline_si_scad(data: DataSet, idx, grid=None, a=3.7) -> SimpleFit:
    """Single regression imputation from complete cases, then SCAD on the
    completed matrix."""
    filled = single_imputation_matrix(data, idx)
    return _scad_bic_path(filled, data.response, grid=grid, a=a)


@dataclass
class MetricRow:
    setting: int
    rho: float
    method: str
    fnr: float
    fpr: float
    fnr_plus_fpr: float
    mse: float
    time_s: float
    reps_used: int


def run_replication(spec: SettingSpec, rep: int, methods=("proposed", "cc", "si"),
                    grid_points: int = 20, threshold: float = 1e-2):
    """Per-method metrics for one replication; failures recorded as None."""
    data, beta_true, seed = make_replication(spec, rep)
    idx = detect_patterns(data)
    out: dict[str, dict | None] = {}
    notes: dict[str, str] = {}
    for method in methods:
        t0 = time.perf_counter()
        try:
            if method == "proposed":
                views = build_views(data, idx, seed=seed)
                grid = tuning.default_grid(data, idx, n_points=grid_points)
                path = tuning.run_path(data, idx, views, grid, seed=seed,
                                       threshold=threshold)
                m = metrics(path.selected_fit.beta_hat, beta_true)
            elif method == "cc":
                m = metrics(baseline_cc_scad(data, idx).beta, beta_true)
            elif method == "si":
                m = metrics(baseline_si_scad(data, idx).beta, beta_true)
            else:
                raise ValueError(f"unknown method {method!r}")
            m["time_s"] = time.perf_counter() - t0
            out[method] = m
        except MbiError as exc:
            out[method] = None
            notes[method] = f"{type(exc).__name__}: {exc}"
    return out, notes


def run_setting(spec: SettingSpec, methods=("proposed", "cc", "si"), *,
                threads: int = 1, grid_points: int = 20,
                threshold: float = 1e-2, verbose: bool = False):
    """Replication means per method; failed replications are excluded."""
    reps = spec.replications
    per_rep: list[dict] = [None] * reps

    def one(rep):
        result, notes = run_replication(spec, rep, methods=methods,
                                        grid_points=grid_points, threshold=threshold)
        if verbose:
            line = ", ".join(
                f"{m}={result[m]['fnr_plus_fpr']:.3f}" if result[m] else f"{m}=failed"
                for m in methods
            )
            print(f"[setting {spec.id} rho={spec.rho} rep {rep}] {line}", flush=True)
        return result

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, rep) for rep in range(reps)]
            per_rep = [f.result() for f in futures]
    else:
        per_rep = [one(rep) for rep in range(reps)]

    rows = []
    for method in methods:
        used = [r[method] for r in per_rep if r[method] is not None]
        if used:
            rows.append(MetricRow(
                setting=spec.id, rho=spec.rho, method=method,
                fnr=float(np.mean([m["fnr"] for m in used])),
                fpr=float(np.mean([m["fpr"] for m in used])),
                fnr_plus_fpr=float(np.mean([m["fnr_plus_fpr"] for m in used])),
                mse=float(np.mean([m["mse"] for m in used])),
                time_s=float(np.mean([m["time_s"] for m in used])),
                reps_used=len(used),
            ))
        else:
            rows.append(MetricRow(setting=spec.id, rho=spec.rho, method=method,
                                  fnr=np.nan, fpr=np.nan, fnr_plus_fpr=np.nan,
                                  mse=np.nan, time_s=np.nan, reps_used=0))
    return rows


def write_metrics_csv(rows: list[MetricRow], path, append: bool = False):
    header = "setting,rho,method,fnr,fpr,fnr_plus_fpr,mse,time_s,reps_used\n"
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        if not append:
            fh.write(header)
        for r in rows:
            fh.write(
                f"{r.setting},{r.rho},{r.method},{r.fnr:.6f},{r.fpr:.6f},"
                f"{r.fnr_plus_fpr:.6f},{r.mse:.6f},{r.time_s:.3f},{r.reps_used}\n"
            )
