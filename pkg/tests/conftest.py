"""Shared builders for small deterministic test instances."""

import numpy as np
import pytest

from mbiselect import simulation
from mbiselect.patterns import make_dataset


def figure_layout_dataset(n_per_group=(6, 5, 5, 5, 4), p_per_source=(2, 2, 2), seed=0,
                          beta=None, noise=1.0):
    """Three sources, five groups: complete; missing source 3; missing
    source 2; missing source 1; only source 3 observed."""
    rng = np.random.default_rng(seed)
    spans = []
    at = 0
    for size in p_per_source:
        spans.append((at, at + size))
        at += size
    p = at
    n = sum(n_per_group)
    X = rng.standard_normal((n, p))
    if beta is None:
        beta = np.zeros(p)
    y = X @ beta + noise * rng.standard_normal(n)

    signatures = [
        (True, True, True),
        (True, True, False),
        (True, False, True),
        (False, True, True),
        (False, False, True),
    ]
    mask = np.zeros((n, p), dtype=bool)
    row = 0
    for size, sig in zip(n_per_group, signatures):
        for s, obs in enumerate(sig):
            if obs:
                lo, hi = spans[s]
                mask[row:row + size, lo:hi] = True
        row += size
    return make_dataset(X, mask, y, spans), np.asarray(beta, dtype=float)


def small_mcar_spec(seed=0, n_samples=200, signals=(5, 5, 5), rho=0.3,
                    relevant=(1, 1, 1), p_per_source=(4, 4, 4),
                    group_sizes=(80, 40, 40, 40)):
    """Figure-layout groups 1-4 over three sources, uniform assignment."""
    return simulation.SettingSpec(
        id=90, n_samples=n_samples, n_covariates=sum(p_per_source),
        q=sum(relevant), n_groups=len(group_sizes), n_sources=len(p_per_source),
        group_sizes=group_sizes, source_sizes=p_per_source,
        signals=signals, relevant_per_source=relevant, rho=rho,
        mechanism="mcar", weight_kind="none",
        signatures=simulation.FIG_LAYOUT_3[:len(group_sizes)],
        seed=seed,
    )


@pytest.fixture
def fig_dataset():
    data, _ = figure_layout_dataset()
    return data


@pytest.fixture
def fitted_toy():
    """A small fitted instance shared by estimating/reduction/diagnostics tests."""
    from mbiselect import detect_patterns, build_views
    from mbiselect.estimating import build_system

    spec = small_mcar_spec(seed=3)
    data, beta_true, seed = simulation.make_replication(spec, 0)
    idx = detect_patterns(data)
    views = build_views(data, idx, seed=seed)
    system = build_system(data, idx, views)
    return data, idx, views, system, beta_true
