"""Stacked estimating functions and block-diagonal weights.

Each group contributes one moment block per donor view: the donor-observed
covariates of the view times the view's residual. Group blocks are stacked
in donor order (complete-case donor first when present), group means are
averaged within the group, and the weight is the per-group uncentered
second moment of the per-sample stacks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .imputation import ImputationSet
from .patterns import DataSet, PatternIndex


@dataclass(frozen=True)
class MomentBlock:
    """Per-donor ingredients of a group's estimating functions.

    For rows i of the group, the per-sample moment is z_i * (y_i - x_i @ beta)
    with z_i the donor-observed subvector of the imputed sample x_i.
    """

    group: int
    donor: int
    z: np.ndarray          # (n_r, dim) donor-observed columns of the view
    x: np.ndarray          # (n_r, p) full imputed view
    offset: int            # column offset inside the group stack

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass
class GroupMoments:
    group: int
    rows: np.ndarray
    y: np.ndarray
    blocks: list[MomentBlock]
    dim: int
    complete_part_dim: int   # leading columns whose donor is the complete-case group
    zy: np.ndarray           # (dim,)  stacked Z^T y / n_r
    jac: np.ndarray          # (dim, p) stacked Z^T X / n_r;  g = zy - jac @ beta

    @property
    def n(self) -> int:
        return self.rows.size

    def per_sample_stack(self, beta: np.ndarray) -> np.ndarray:
        """(n_r, dim) matrix whose rows are the per-sample moment vectors."""
        S = np.empty((self.n, self.dim))
        for b in self.blocks:
            resid = self.y - b.x @ beta
            S[:, b.offset:b.offset + b.dim] = b.z * resid[:, None]
        return S

    def mean(self, beta: np.ndarray) -> np.ndarray:
        return self.zy - self.jac @ beta


@dataclass(frozen=True)
class EstimatingSystem:
    """All group moment structures plus layout metadata.

    Only groups at or above the pattern index's size floor contribute.
    """

    groups: list[GroupMoments]
    n_covariates: int
    total_dim: int
    n_total: int             # total rows across contributing groups

    def group(self, r: int) -> GroupMoments:
        for g in self.groups:
            if g.group == r:
                return g
        raise KeyError(r)

    def aggregate(self, beta: np.ndarray):
        """Concatenated group means and the per-group weight blocks."""
        means, weights = [], []
        for g in self.groups:
            S = g.per_sample_stack(beta)
            means.append(g.mean(beta))
            weights.append(weight_block(S))
        return np.concatenate(means), weights

    def dense_weight(self, beta: np.ndarray) -> np.ndarray:
        """Full block-diagonal weight matrix (diagnostics and small tests)."""
        _, weights = self.aggregate(beta)
        W = np.zeros((self.total_dim, self.total_dim))
        at = 0
        for Wr in weights:
            d = Wr.shape[0]
            W[at:at + d, at:at + d] = Wr
            at += d
        return W

    def full_jacobian(self) -> np.ndarray:
        """(total_dim, p) Jacobian of -g; g(b1) - g(b2) = jac @ (b2 - b1)."""
        return np.vstack([g.jac for g in self.groups])


def build_system(data: DataSet, idx: PatternIndex, imputations: ImputationSet) -> EstimatingSystem:
    """Assemble the estimating system from imputed views.

    Raises
    ------
    DimensionMismatch
        If a view's donor columns disagree with the donor's observed set.
    """
    groups = []
    complete = idx.complete_group
    total = 0
    n_total = 0
    for r in idx.active_groups:
        rows = idx.members[r]
        y_r = data.response[rows]
        blocks = []
        offset = 0
        complete_dim = 0
        for view in imputations.views[r]:
            expected = idx.observed_sets[view.donor]
            if view.donor_columns.size != expected.size or not np.array_equal(
                np.sort(view.donor_columns), expected
            ):
                raise DimensionMismatch(
                    f"view (group {r + 1}, donor {view.donor + 1}) columns disagree "
                    "with the donor's observed set"
                )
            z = view.values[:, view.donor_columns]
            blocks.append(MomentBlock(group=r, donor=view.donor, z=z, x=view.values,
                                      offset=offset))
            if complete is not None and view.donor == complete:
                complete_dim += z.shape[1]
            offset += z.shape[1]
        n_r = rows.size
        zy = np.concatenate([b.z.T @ y_r / n_r for b in blocks])
        jac = np.vstack([b.z.T @ b.x / n_r for b in blocks])
        groups.append(
            GroupMoments(group=r, rows=rows, y=y_r, blocks=blocks, dim=offset,
                         complete_part_dim=complete_dim, zy=zy, jac=jac)
        )
        total += offset
        n_total += n_r
    return EstimatingSystem(groups=groups, n_covariates=data.n_covariates,
                            total_dim=total, n_total=n_total)


def moment_vector(system: EstimatingSystem, beta: np.ndarray, r: int):
    """Group-r mean estimating function and the per-sample stack."""
    g = system.group(r)
    return g.mean(beta), g.per_sample_stack(beta)


def weight_block(per_sample_stack: np.ndarray) -> np.ndarray:
    """Uncentered second moment (1/n) * S^T S of a per-sample stack."""
    n = per_sample_stack.shape[0]
    return per_sample_stack.T @ per_sample_stack / n
