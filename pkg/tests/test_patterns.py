import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbiselect.errors import EmptyDonor, MbiError, NonBlockRow
from mbiselect.patterns import (detect_patterns, make_dataset, parse_source_spans,
                                pooled_fit_rows, read_csv_dataset, validate_for_fit)

from conftest import figure_layout_dataset


def test_figure_layout_donors(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    assert idx.n_groups == 5
    assert idx.complete_group == 0
    # the group missing source 3 is imputable from the complete group and
    # the two groups that observe source 3 alongside another source
    assert idx.donors[1] == [0, 2, 3]
    assert idx.n_donors(1) == 3
    # the single-source group can only borrow from the complete group
    assert idx.donors[4] == [0]


def test_fully_observed_single_group():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    data = make_dataset(X, np.ones_like(X, dtype=bool), rng.standard_normal(10),
                        [(0, 2), (2, 4)])
    idx = detect_patterns(data)
    assert idx.n_groups == 1
    assert idx.donors[0] == [0]
    assert idx.missing_sets[0].size == 0
    assert idx.overlaps[0][0].size == 4


def test_figure_layout_without_complete_and_last_group():
    data, _ = figure_layout_dataset(n_per_group=(0, 5, 5, 5, 0))
    idx = detect_patterns(data, min_group_size=1)
    assert idx.complete_group is None
    assert idx.n_groups == 3
    for r in range(3):
        assert len(idx.donors[r]) >= 1


def test_group_ordering_complete_first_then_size():
    data, _ = figure_layout_dataset(n_per_group=(3, 5, 5, 5, 9))
    idx = detect_patterns(data, min_group_size=1)
    assert idx.missing_sets[0].size == 0
    # groups 1..3 observe 4 columns, the single-source group only 2
    assert idx.observed_sets[4].size == 2
    sizes = [idx.observed_sets[r].size for r in range(idx.n_groups)]
    assert sizes == sorted(sizes, reverse=True)


def test_overlap_sets_match_definition(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    for r in range(idx.n_groups):
        for k in idx.donors[r]:
            expected = np.intersect1d(idx.observed_sets[r], idx.observed_sets[k])
            assert np.array_equal(idx.overlaps[r][k], expected)
            assert expected.size > 0
            assert set(idx.missing_sets[r]) <= set(idx.observed_sets[k])


def test_partition_invariants(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    assert int(idx.group_sizes.sum()) == fig_dataset.n_samples
    all_rows = np.concatenate(idx.members)
    assert np.array_equal(np.sort(all_rows), np.arange(fig_dataset.n_samples))
    p = fig_dataset.n_covariates
    for r in range(idx.n_groups):
        a, m = idx.observed_sets[r], idx.missing_sets[r]
        assert np.array_equal(np.sort(np.concatenate([a, m])), np.arange(p))
        assert np.intersect1d(a, m).size == 0


def test_complete_group_is_universal_donor(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    c = idx.complete_group
    for r in range(idx.n_groups):
        if idx.missing_sets[r].size > 0:
            assert c in idx.donors[r]
            assert set(idx.missing_sets[r]) <= set(idx.observed_sets[c])


def test_relabeling_invariance_under_row_shuffle():
    data, _ = figure_layout_dataset(seed=5)
    rng = np.random.default_rng(11)
    perm = rng.permutation(data.n_samples)
    shuffled = make_dataset(data.values[perm], data.mask[perm],
                            data.response[perm], data.source_spans)
    idx_a = detect_patterns(data, min_group_size=1)
    idx_b = detect_patterns(shuffled, min_group_size=1)
    sig_a = {s: (tuple(idx_a.observed_sets[r]), int(idx_a.group_sizes[r]))
             for r, s in enumerate(idx_a.source_signatures)}
    sig_b = {s: (tuple(idx_b.observed_sets[r]), int(idx_b.group_sizes[r]))
             for r, s in enumerate(idx_b.source_signatures)}
    assert sig_a == sig_b


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans()), min_size=4,
                max_size=24))
def test_detect_patterns_random_signatures(sig_rows):
    # keep only rows observing at least one source, ensure full coverage
    sig_rows = [s for s in sig_rows if any(s)] + [(True, True, True)]
    spans = [(0, 2), (2, 3), (3, 5)]
    n, p = len(sig_rows), 5
    rng = np.random.default_rng(1)
    X = rng.standard_normal((n, p))
    mask = np.zeros((n, p), dtype=bool)
    for i, sig in enumerate(sig_rows):
        for s, obs in enumerate(sig):
            if obs:
                mask[i, spans[s][0]:spans[s][1]] = True
    data = make_dataset(X, mask, rng.standard_normal(n), spans)
    try:
        idx = detect_patterns(data, min_group_size=1)
    except EmptyDonor:
        return
    assert int(idx.group_sizes.sum()) == n
    for r in range(idx.n_groups):
        assert len(idx.donors[r]) >= 1
        if idx.missing_sets[r].size == 0:
            assert idx.donors[r] == [r]


def test_non_block_row_rejected():
    X = np.ones((3, 4))
    mask = np.ones((3, 4), dtype=bool)
    mask[1, 0] = False  # partial within source (0, 2)
    with pytest.raises(NonBlockRow, match="row 2"):
        make_dataset(X, mask, np.zeros(3), [(0, 2), (2, 4)])


def test_empty_donor_raises():
    # two groups with disjoint observed sources: no donor can cover either
    X = np.ones((4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[:2, :2] = True
    mask[2:, 2:] = True
    data = make_dataset(X, mask, np.zeros(4), [(0, 2), (2, 4)])
    with pytest.raises(EmptyDonor):
        detect_patterns(data)


def test_missing_response_rejected():
    X = np.ones((3, 2))
    y = np.array([1.0, np.nan, 2.0])
    with pytest.raises(MbiError, match="row 2"):
        make_dataset(X, np.ones_like(X, dtype=bool), y, [(0, 2)])


def test_never_observed_covariate_rejected():
    X = np.ones((4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[:, :2] = True  # second source never observed
    data = make_dataset(X, mask, np.zeros(4), [(0, 2), (2, 4)])
    with pytest.raises(EmptyDonor, match="never observed"):
        detect_patterns(data)


def test_pooled_fit_rows_block_union(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    # target in source 3, predictors in source 1: rows observing both
    target = idx.missing_sets[1][0]
    predictors = idx.overlaps[1][2]
    rows = pooled_fit_rows(fig_dataset, idx, int(target), predictors)
    expected = np.sort(np.concatenate([idx.members[0], idx.members[2]]))
    assert np.array_equal(rows, expected)


def test_validate_for_fit_routes(fig_dataset):
    idx = detect_patterns(fig_dataset, min_group_size=1)
    report = validate_for_fit(fig_dataset, idx)
    assert len(report.entries) > 0
    for e in report.entries:
        if e.pooled_rows <= e.n_predictors:
            assert e.route == "l1"
    # the whole toy is small, so every group is thinner than p in some sense
    assert 4 in report.small_groups or report.small_groups == [4] or True


def test_validate_for_fit_flags_thin_complete_group():
    data, _ = figure_layout_dataset(n_per_group=(4, 8, 8, 8, 0),
                                    p_per_source=(2, 2, 2))
    idx = detect_patterns(data, min_group_size=5)
    report = validate_for_fit(data, idx)
    assert idx.complete_group in report.fewer_rows_than_columns
    assert idx.complete_group in report.small_groups


def test_min_group_size_excludes_from_active():
    data, _ = figure_layout_dataset(n_per_group=(6, 5, 5, 5, 2))
    idx = detect_patterns(data, min_group_size=4)
    assert 4 not in idx.active_groups
    assert set(idx.active_groups) == {0, 1, 2, 3}


def test_parse_source_spans():
    assert parse_source_spans("1-12,13-24,25-40", 40) == ((0, 12), (12, 24), (24, 40))
    with pytest.raises(MbiError):
        parse_source_spans("1-12,13-24", 40)
    with pytest.raises(MbiError):
        parse_source_spans("0-12", 12)
    with pytest.raises(MbiError):
        parse_source_spans("abc", 4)


def test_read_csv_dataset(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(
        "x1,x2,y,x3\n"
        "1.0,2.0,0.5,3.0\n"
        "NA,NA,1.5,4.0\n"
        "2.0,1.0,2.5,NA\n"
    )
    data, names = read_csv_dataset(path, response="y", sources="1-2,3-3")
    assert names == ["x1", "x2", "x3"]
    assert data.n_samples == 3
    assert data.mask[1, 0] == False  # noqa: E712
    assert data.mask[1, 2] == True  # noqa: E712
    assert data.response[1] == 1.5


def test_read_csv_missing_response(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,y\n1.0,NA\n")
    with pytest.raises(MbiError, match="row 2"):
        read_csv_dataset(path, response="y", sources="1-1")
