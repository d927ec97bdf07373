"""Missing-pattern detection for multi-source data with block-wise missingness.

Rows are grouped by which sources they observe; all index sets driving
imputation and estimation (observed/missing covariates, group members,
donor groups, and pairwise overlaps) are derived from those signatures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDonor, MbiError, NonBlockRow


@dataclass(frozen=True)
class DataSet:
    """Design matrix with block-wise missingness plus a complete response.

    Attributes
    ----------
    values : (N, p) float array
        Covariate values; entries at unobserved positions are undefined
        (stored as NaN).
    mask : (N, p) bool array
        True where observed. Constant within each source span per row.
    response : (N,) float array
        Fully observed response.
    source_spans : tuple of (start, stop) pairs
        Half-open column ranges, disjoint, sorted, covering 0..p.
    """

    values: np.ndarray
    mask: np.ndarray
    response: np.ndarray
    source_spans: tuple[tuple[int, int], ...]

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.values.shape[1]

    @property
    def n_sources(self) -> int:
        return len(self.source_spans)

    def source_of_column(self) -> np.ndarray:
        """Length-p array mapping each column to its source index."""
        out = np.empty(self.n_covariates, dtype=int)
        for s, (lo, hi) in enumerate(self.source_spans):
            out[lo:hi] = s
        return out


def make_dataset(values, mask, response, source_spans) -> DataSet:
    """Validate and freeze raw arrays into a :class:`DataSet`.

    Raises
    ------
    NonBlockRow
        If any row is partially observed within a source span.
    MbiError
        If spans do not partition the columns or the response has
        missing entries.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    response = np.asarray(response, dtype=float)
    if values.ndim != 2 or mask.shape != values.shape:
        raise MbiError("values and mask must be 2-D arrays of equal shape")
    if response.shape != (values.shape[0],):
        raise MbiError("response length must match the number of rows")
    if not np.all(np.isfinite(response)):
        bad = int(np.flatnonzero(~np.isfinite(response))[0])
        raise MbiError(f"response has a missing value at row {bad + 1}")

    spans = tuple((int(lo), int(hi)) for lo, hi in source_spans)
    p = values.shape[1]
    covered = np.zeros(p, dtype=bool)
    last = 0
    for lo, hi in spans:
        if lo != last or hi <= lo:
            raise MbiError(f"source spans must be sorted, disjoint, and contiguous: ({lo}, {hi})")
        covered[lo:hi] = True
        last = hi
    if last != p or not covered.all():
        raise MbiError("source spans must cover every column exactly once")

    for lo, hi in spans:
        block = mask[:, lo:hi]
        partial = block.any(axis=1) & ~block.all(axis=1)
        if partial.any():
            bad = int(np.flatnonzero(partial)[0])
            raise NonBlockRow(
                f"row {bad + 1} is partially observed within source columns {lo + 1}..{hi}"
            )

    values = values.copy()
    values[~mask] = np.nan
    values.setflags(write=False)
    mask = mask.copy()
    mask.setflags(write=False)
    response = response.copy()
    response.setflags(write=False)
    return DataSet(values=values, mask=mask, response=response, source_spans=spans)


@dataclass(frozen=True)
class PatternIndex:
    """All index sets of a missing-pattern grouping (0-based, arrays sorted).

    Groups are ordered with the complete-case group (if any) first, then by
    decreasing number of observed columns, ties by first row occurrence.
    """

    group_of: np.ndarray                       # (N,) group label per row
    observed_sets: list[np.ndarray]            # a(r): observed column indices
    missing_sets: list[np.ndarray]             # m(r): missing column indices
    members: list[np.ndarray]                  # H(r): row indices
    donors: list[list[int]]                    # G(r): donor group indices, ascending
    overlaps: list[dict[int, np.ndarray]]      # J(r,k) for k in G(r)
    group_sizes: np.ndarray                    # n_r
    source_signatures: list[tuple[bool, ...]]  # observed sources per group
    min_group_size: int = 5
    active_groups: list[int] = field(default_factory=list)  # groups providing moment blocks

    @property
    def n_groups(self) -> int:
        return len(self.members)

    @property
    def complete_group(self) -> int | None:
        """Index of the complete-case group, or None."""
        if self.missing_sets and self.missing_sets[0].size == 0:
            return 0
        return None

    def n_donors(self, r: int) -> int:
        return len(self.donors[r])


def detect_patterns(data: DataSet, min_group_size: int = 5) -> PatternIndex:
    """Group rows by source-level observation signature and build index sets.

    The donor set of group ``r`` contains every group ``k`` whose observed
    columns cover all of ``r``'s missing columns while still overlapping
    ``r``'s observed columns; a group with nothing missing is its own donor.

    Parameters
    ----------
    data : DataSet
    min_group_size : int
        Groups smaller than this floor keep their imputations but are
        excluded from contributing their own moment block downstream.

    Raises
    ------
    EmptyDonor
        If some group has no donor at all.
    NonBlockRow
        If the mask violates block structure (defensive re-check).
    """
    n, p = data.values.shape
    n_sources = data.n_sources

    sig_matrix = np.zeros((n, n_sources), dtype=bool)
    for s, (lo, hi) in enumerate(data.source_spans):
        block = data.mask[:, lo:hi]
        partial = block.any(axis=1) & ~block.all(axis=1)
        if partial.any():
            bad = int(np.flatnonzero(partial)[0])
            raise NonBlockRow(f"row {bad + 1} breaks block structure in source {s + 1}")
        sig_matrix[:, s] = block.all(axis=1)

    first_seen: dict[tuple[bool, ...], int] = {}
    for i in range(n):
        key = tuple(sig_matrix[i])
        if key not in first_seen:
            first_seen[key] = i

    def observed_count(sig):
        return sum(hi - lo for s, (lo, hi) in enumerate(data.source_spans) if sig[s])

    signatures = sorted(
        first_seen,
        key=lambda sig: (not all(sig), -observed_count(sig), first_seen[sig]),
    )
    sig_to_group = {sig: g for g, sig in enumerate(signatures)}

    group_of = np.array([sig_to_group[tuple(sig_matrix[i])] for i in range(n)], dtype=int)

    observed_sets, missing_sets, members = [], [], []
    for g, sig in enumerate(signatures):
        cols = np.concatenate(
            [np.arange(lo, hi) for s, (lo, hi) in enumerate(data.source_spans) if sig[s]]
            or [np.array([], dtype=int)]
        ).astype(int)
        observed_sets.append(cols)
        missing_sets.append(np.setdiff1d(np.arange(p), cols))
        members.append(np.flatnonzero(group_of == g))

    all_observed = np.unique(np.concatenate(observed_sets)) if observed_sets else np.array([])
    if all_observed.size != p:
        never = np.setdiff1d(np.arange(p), all_observed)
        raise EmptyDonor(f"covariates never observed in any group: columns {never + 1}")

    donors: list[list[int]] = []
    overlaps: list[dict[int, np.ndarray]] = []
    for r, sig in enumerate(signatures):
        if missing_sets[r].size == 0:
            donors.append([r])
            overlaps.append({r: observed_sets[r]})
            continue
        ds, ov = [], {}
        missing_r = set(missing_sets[r].tolist())
        for k in range(len(signatures)):
            if k == r:
                continue
            a_k = set(observed_sets[k].tolist())
            if missing_r <= a_k:
                j = np.intersect1d(observed_sets[r], observed_sets[k])
                if j.size > 0:
                    ds.append(k)
                    ov[k] = j
        if not ds:
            raise EmptyDonor(
                f"group {r + 1} (pattern {sig}) has no donor group covering its missing block"
            )
        donors.append(ds)
        overlaps.append(ov)

    sizes = np.array([m.size for m in members], dtype=int)
    active = [g for g in range(len(members)) if sizes[g] >= min_group_size]
    return PatternIndex(
        group_of=group_of,
        observed_sets=observed_sets,
        missing_sets=missing_sets,
        members=members,
        donors=donors,
        overlaps=overlaps,
        group_sizes=sizes,
        source_signatures=[tuple(s) for s in signatures],
        min_group_size=min_group_size,
        active_groups=active,
    )


@dataclass
class FeasibilityEntry:
    group: int
    donor: int
    target: int
    pooled_rows: int
    n_predictors: int
    route: str  # "glm" or "l1"


@dataclass
class FeasibilityReport:
    entries: list[FeasibilityEntry]
    small_groups: list[int]          # n_r below the floor
    fewer_rows_than_columns: list[int]  # n_r <= p, own moment covariance rank-deficient

    @property
    def all_glm(self) -> bool:
        return all(e.route == "glm" for e in self.entries)


def pooled_fit_rows(data: DataSet, idx: PatternIndex, target: int, predictors: np.ndarray) -> np.ndarray:
    """Row indices where the target and every predictor are observed.

    By block structure this is a union of whole groups.
    """
    rows = []
    pred = set(np.asarray(predictors, dtype=int).tolist())
    for g in range(idx.n_groups):
        a_g = set(idx.observed_sets[g].tolist())
        if target in a_g and pred <= a_g:
            rows.append(idx.members[g])
    if not rows:
        return np.array([], dtype=int)
    return np.sort(np.concatenate(rows))


def validate_for_fit(data: DataSet, idx: PatternIndex) -> FeasibilityReport:
    """Advisory per-(group, donor, target) feasibility report.

    For each imputation regression, reports the pooled sample size against
    the number of predictors, which drives the downstream choice between a
    plain and an L1-regularized fit.
    """
    from .linmod import use_l1_route

    entries = []
    for r in range(idx.n_groups):
        if idx.missing_sets[r].size == 0:
            continue
        for k in idx.donors[r]:
            j_rk = idx.overlaps[r][k]
            for target in idx.missing_sets[r]:
                n_pool = pooled_fit_rows(data, idx, int(target), j_rk).size
                route = "l1" if use_l1_route(n_pool, j_rk.size) else "glm"
                entries.append(
                    FeasibilityEntry(
                        group=r,
                        donor=k,
                        target=int(target),
                        pooled_rows=int(n_pool),
                        n_predictors=int(j_rk.size),
                        route=route,
                    )
                )
    sizes = idx.group_sizes
    small = [g for g in range(idx.n_groups) if sizes[g] < idx.min_group_size]
    thin = [g for g in range(idx.n_groups) if sizes[g] <= data.n_covariates]
    return FeasibilityReport(entries=entries, small_groups=small, fewer_rows_than_columns=thin)


def parse_source_spans(text: str, n_columns: int) -> tuple[tuple[int, int], ...]:
    """Parse a 1-based inclusive span string like ``"1-12,13-24,25-40"``."""
    spans = []
    for part in text.split(","):
        part = part.strip()
        if "-" not in part:
            raise MbiError(f"bad span {part!r}: expected lo-hi")
        lo_s, hi_s = part.split("-", 1)
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError as exc:
            raise MbiError(f"bad span {part!r}: not integers") from exc
        if lo < 1 or hi < lo:
            raise MbiError(f"bad span {part!r}: need 1 <= lo <= hi")
        spans.append((lo - 1, hi))
    if spans and spans[-1][1] != n_columns:
        raise MbiError(
            f"source spans end at column {spans[-1][1]} but data has {n_columns} columns"
        )
    return tuple(spans)


def read_csv_dataset(path, response: str, sources: str) -> tuple[DataSet, list[str]]:
    """Load a CSV with header row and ``NA`` (case-sensitive) missing cells.

    Returns the dataset plus covariate column names in order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MbiError(f"{path}: empty file") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    if response not in header:
        raise MbiError(f"{path}: response column {response!r} not in header")
    y_col = header.index(response)
    cov_names = [h for i, h in enumerate(header) if i != y_col]

    n, p = len(rows), len(header) - 1
    if n == 0:
        raise MbiError(f"{path}: no data rows")
    values = np.full((n, p), np.nan)
    mask = np.zeros((n, p), dtype=bool)
    y = np.empty(n)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise MbiError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        cell = row[y_col].strip()
        if cell == "NA":
            raise MbiError(f"{path}: missing response at row {i + 2}")
        try:
            y[i] = float(cell)
        except ValueError:
            raise MbiError(f"{path}: bad response value {cell!r} at row {i + 2}") from None
        j = 0
        for c, cell in enumerate(row):
            if c == y_col:
                continue
            cell = cell.strip()
            if cell != "NA":
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise MbiError(
                        f"{path}: bad value {cell!r} at row {i + 2}, column {header[c]!r}"
                    ) from None
                mask[i, j] = True
            j += 1

    spans = parse_source_spans(sources, p)
    return make_dataset(values, mask, y, spans), cov_names
