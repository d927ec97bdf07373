"""Empirical covariance of the selected coefficients and the efficiency
comparison against the single-imputation subsystem.

Both are computed in the transformed moment coordinates anchored at the
fitted coefficients. The single-imputation subsystem is exactly the
complete-donor coordinates of that transform, so the full system's
information dominates it by construction and the covariance gap is
positive semi-definite up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoCompleteGroup, SingularV1
from .estimating import EstimatingSystem, build_system
from .imputation import ImputationSet
from .optimizer import GRAD_REL_STEP, FitResult
from .patterns import DataSet, PatternIndex
from .reduction import build_reduction


@dataclass
class CovariancePieces:
    v1: np.ndarray            # (D', D') block-diagonal second moment / N
    v2: np.ndarray            # (|A1|, D') Jacobian of mean transformed moments
    complete_coords: np.ndarray  # indices of the complete-donor coordinates
    active: np.ndarray
    out_dims: list[int]


def _transformed_pieces(data: DataSet, idx: PatternIndex, views: ImputationSet,
                        fit: FitResult, system: EstimatingSystem | None = None,
                        rel_step: float = GRAD_REL_STEP) -> CovariancePieces:
    if system is None:
        system = build_system(data, idx, views)
    beta = fit.beta_hat
    active = fit.active_set
    if active.size == 0:
        raise SingularV1("empty active set")
    rmap = build_reduction(system, beta)

    n_total = data.n_samples
    out_dims = [rmap.entry(g.group).out_dim for g in system.groups]
    total = sum(out_dims)
    v1 = np.zeros((total, total))
    complete_coords = []
    at = 0
    for g, dp in zip(system.groups, out_dims):
        e = rmap.entry(g.group)
        P = e.apply(g.per_sample_stack(beta))
        v1[at:at + dp, at:at + dp] = P.T @ P / n_total
        complete_coords.extend(range(at, at + e.complete_out_dim))
        at += dp

    def mean_vec(b):
        parts = []
        for g in system.groups:
            e = rmap.entry(g.group)
            parts.append(e.apply(g.mean(b)) * (g.n / n_total))
        return np.concatenate(parts)

    v2 = np.zeros((active.size, total))
    for row, j in enumerate(active):
        h = rel_step * max(1.0, abs(beta[j]))
        bp, bm = beta.copy(), beta.copy()
        bp[j] += h
        bm[j] -= h
        v2[row] = (mean_vec(bp) - mean_vec(bm)) / (2 * h)

    return CovariancePieces(v1=v1, v2=v2,
                            complete_coords=np.array(complete_coords, dtype=int),
                            active=active, out_dims=out_dims)


def _information(v1, v2):
    eig = np.linalg.eigvalsh((v1 + v1.T) / 2)
    if eig[0] <= 0 or eig[0] / eig[-1] < 1e-13:
        raise SingularV1(
            f"transformed moment covariance nearly singular (rcond {eig[0] / eig[-1]:.2e})"
        )
    return v2 @ np.linalg.solve(v1, v2.T)


def _invert_information(info):
    eig = np.linalg.eigvalsh((info + info.T) / 2)
    if eig[0] <= 0:
        raise SingularV1("information matrix of the active set not positive definite")
    v = np.linalg.solve(info, np.eye(info.shape[0]))
    return (v + v.T) / 2


def empirical_covariance(data: DataSet, idx: PatternIndex, views: ImputationSet,
                         fit: FitResult, system: EstimatingSystem | None = None) -> np.ndarray:
    """Covariance estimate of the active coefficients at the fitted values.

    Raises
    ------
    SingularV1
        If the transformed moment covariance or the active-set information
        matrix is not invertible (signals a reduction bug).
    """
    pieces = _transformed_pieces(data, idx, views, fit, system=system)
    return _invert_information(_information(pieces.v1, pieces.v2))


@dataclass
class GapReport:
    min_eigenvalue: float
    v_full: np.ndarray
    v_single: np.ndarray
    scale: float          # spectral norm of the single-imputation covariance

    def is_psd(self, tol_factor: float = 1e-8) -> bool:
        return self.min_eigenvalue >= -tol_factor * self.scale


def efficiency_gap(data: DataSet, idx: PatternIndex, views: ImputationSet,
                   fit: FitResult, system: EstimatingSystem | None = None) -> GapReport:
    """Minimum eigenvalue of (single-imputation covariance - full covariance).

    Raises
    ------
    NoCompleteGroup
        If the data has no complete-case group, so the single-imputation
        subsystem is undefined.
    """
    if idx.complete_group is None:
        raise NoCompleteGroup("single-imputation subsystem needs a complete-case group")
    pieces = _transformed_pieces(data, idx, views, fit, system=system)
    v_full = _invert_information(_information(pieces.v1, pieces.v2))

    sel = pieces.complete_coords
    if sel.size == 0:
        raise NoCompleteGroup("no complete-donor moment coordinates present")
    v1_s = pieces.v1[np.ix_(sel, sel)]
    v2_s = pieces.v2[:, sel]
    v_single = _invert_information(_information(v1_s, v2_s))

    gap = (v_single - v_full + (v_single - v_full).T) / 2
    min_eig = float(np.linalg.eigvalsh(gap)[0])
    scale = float(np.linalg.eigvalsh((v_single + v_single.T) / 2)[-1])
    return GapReport(min_eigenvalue=min_eig, v_full=v_full, v_single=v_single,
                     scale=scale)
