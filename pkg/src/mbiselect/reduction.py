"""Principal-component reduction of near-singular moment covariances.

Each group's moments split into a part imputed from complete observations
and a remainder. A near-singular part is replaced by its leading principal
components (count chosen by a BIC-type criterion); the remainder is
orthogonalized against the kept components before its own reduction. The
resulting per-group maps assemble into one block transform of the whole
estimating system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AllComponentsDropped, ZeroTrace
from .estimating import EstimatingSystem

RCOND_TRIGGER = 1e-8
EIG_ZERO_REL = 1e-12


def split_moments(system: EstimatingSystem, beta: np.ndarray, r: int):
    """Group-r mean moments split into (complete-donor part, remainder).

    Either part may be empty: a complete-case group has no remainder, and
    with no complete-case group the first part is empty for every group.
    """
    g = system.group(r)
    mean = g.mean(beta)
    d1 = g.complete_part_dim
    return mean[:d1], mean[d1:]


def _psi_values(eigvals_desc: np.ndarray, n_r: int) -> np.ndarray:
    """BIC-type criterion over component counts t = 0..d.

    Psi(t) = (sum of dropped eigenvalues)/trace + t * log(n_r d)/(n_r d).
    """
    d = eigvals_desc.size
    trace = float(eigvals_desc.sum())
    dropped = trace - np.concatenate([[0.0], np.cumsum(eigvals_desc)])
    cost = np.arange(d + 1) * (np.log(n_r * d) / (n_r * d))
    return dropped / trace + cost


def select_pc_count(omega: np.ndarray, n_r: int) -> int:
    """Smallest minimizer of the BIC-type criterion for a PSD matrix.

    Equals the number of eigenvalues exceeding trace * log(n_r d)/(n_r d).

    Raises
    ------
    ZeroTrace
        If the trace is not positive within tolerance.
    """
    omega = np.asarray(omega, dtype=float)
    d = omega.shape[0]
    eigvals = np.linalg.eigvalsh((omega + omega.T) / 2.0)[::-1]
    eigvals = np.clip(eigvals, 0.0, None)
    trace = float(eigvals.sum())
    if trace <= 0.0:
        raise ZeroTrace(f"trace {trace} not positive")
    psi = _psi_values(eigvals, n_r)
    return int(np.argmin(psi))  # argmin returns the smallest index on ties


@dataclass
class GroupReduction:
    group: int
    d1: int
    d2: int
    t1: int
    t2: int
    u: np.ndarray | None          # None means identity (no reduction, no orthogonalization)
    triggered1: bool = False
    triggered2: bool = False

    @property
    def out_dim(self) -> int:
        return self.d1 + self.d2 if self.u is None else self.u.shape[0]

    @property
    def complete_out_dim(self) -> int:
        """Transformed coordinates that carry the complete-donor part."""
        return self.d1 if self.u is None else self.t1

    def apply(self, stack_or_vec: np.ndarray) -> np.ndarray:
        """Transform per-sample stacks (rows) or a mean moment vector."""
        if self.u is None:
            return stack_or_vec
        if stack_or_vec.ndim == 1:
            return self.u @ stack_or_vec
        return stack_or_vec @ self.u.T


@dataclass
class ReductionMap:
    entries: list[GroupReduction]
    anchor_beta: np.ndarray = field(repr=False, default=None)

    def entry(self, r: int) -> GroupReduction:
        for e in self.entries:
            if e.group == r:
                return e
        raise KeyError(r)

    @property
    def total_out_dim(self) -> int:
        return sum(e.out_dim for e in self.entries)

    def summary_rows(self):
        return [
            (e.group, e.d1, e.d2, e.t1, e.t2, e.triggered1 or e.triggered2)
            for e in self.entries
        ]


def _rcond_psd(mat: np.ndarray):
    """(reciprocal condition, descending eigenvalues) of a symmetric PSD matrix."""
    if mat.size == 0:
        return 1.0, np.zeros(0)
    eigvals = np.linalg.eigvalsh((mat + mat.T) / 2.0)[::-1]
    top = eigvals[0]
    if top <= 0:
        return 0.0, np.clip(eigvals, 0.0, None)
    return float(max(eigvals[-1], 0.0) / top), np.clip(eigvals, 0.0, None)


def _reduce_part(omega: np.ndarray, n_r: int, trigger: float):
    """(U, eigenvalues kept, t, triggered) for one moment part.

    U is None when the part is kept whole.
    """
    d = omega.shape[0]
    rc, eigvals = _rcond_psd(omega)
    if d == 0:
        return None, np.zeros(0), 0, False
    if rc >= trigger:
        return None, eigvals, d, False
    top = eigvals[0]
    if top <= 0.0:
        return np.zeros((0, d)), np.zeros(0), 0, True
    nonzero = int(np.sum(eigvals > EIG_ZERO_REL * top))
    t = min(select_pc_count(omega, n_r), nonzero)
    if t == 0:
        return np.zeros((0, d)), np.zeros(0), 0, True
    _, vecs = np.linalg.eigh((omega + omega.T) / 2.0)
    u = vecs[:, ::-1][:, :t].T
    return u, eigvals[:t], t, True


def reduce_group(S: np.ndarray, d1: int, n_r: int, trigger: float = RCOND_TRIGGER,
                 group: int = 0) -> GroupReduction:
    """Build the reduction of one group from its per-sample moment stack."""
    d = S.shape[1]
    d2 = d - d1
    W = S.T @ S / n_r
    W11 = W[:d1, :d1]
    W22 = W[d1:, d1:]
    W21 = W[d1:, :d1]

    u1, kept1, t1, trig1 = _reduce_part(W11, n_r, trigger)

    # remainder orthogonalized against the kept complete-donor components
    if d2 > 0 and d1 > 0 and t1 > 0:
        if u1 is None:
            v21 = W21
            b = np.linalg.solve(W11, v21.T).T
        else:
            v21 = W21 @ u1.T
            b = v21 / kept1[None, :]  # V11 is diagonal in the eigenbasis
        omega_bar = W22 - b @ v21.T
    else:
        b = None
        omega_bar = W22

    u2, _, t2, trig2 = _reduce_part(omega_bar, n_r, trigger) if d2 > 0 else (None, None, 0, False)

    if t1 + t2 == 0 and (d1 + d2) > 0:
        mean_norm = float(np.max(np.abs(S.mean(axis=0)))) if S.size else 0.0
        scale = float(np.max(np.abs(W))) if W.size else 0.0
        if mean_norm > 1e-10 * max(1.0, scale) and scale > 0.0:
            raise AllComponentsDropped(
                f"group {group + 1}: reduction dropped all components "
                f"(moment scale {mean_norm:.3e}, weight scale {scale:.3e})"
            )

    if not trig1 and not trig2:
        return GroupReduction(group=group, d1=d1, d2=d2, t1=d1, t2=d2, u=None)

    u1_mat = np.eye(d1) if u1 is None else u1
    u2_mat = np.eye(d2) if (u2 is None) else u2
    u = np.zeros((t1 + t2, d))
    if t1 > 0:
        u[:t1, :d1] = u1_mat
    if t2 > 0:
        u[t1:, d1:] = u2_mat
        if b is not None and t1 > 0:
            u[t1:, :d1] = -u2_mat @ b @ u1_mat
    return GroupReduction(group=group, d1=d1, d2=d2, t1=t1, t2=t2, u=u,
                          triggered1=trig1, triggered2=trig2)


def build_reduction(system: EstimatingSystem, beta: np.ndarray,
                    trigger: float = RCOND_TRIGGER) -> ReductionMap:
    """Per-group reductions of the weight blocks evaluated at ``beta``."""
    entries = []
    for g in system.groups:
        S = g.per_sample_stack(beta)
        entries.append(reduce_group(S, g.complete_part_dim, g.n, trigger=trigger,
                                    group=g.group))
    return ReductionMap(entries=entries, anchor_beta=np.asarray(beta, dtype=float).copy())


def identity_reduction(system: EstimatingSystem) -> ReductionMap:
    """Identity map for every group (no reduction, raw objective)."""
    entries = [
        GroupReduction(group=g.group, d1=g.complete_part_dim,
                       d2=g.dim - g.complete_part_dim,
                       t1=g.complete_part_dim, t2=g.dim - g.complete_part_dim, u=None)
        for g in system.groups
    ]
    return ReductionMap(entries=entries, anchor_beta=None)


def cross_covariance_check(system: EstimatingSystem, rmap: ReductionMap, beta: np.ndarray):
    """Per-group (cross-covariance max-entry, weight scale) at ``beta``.

    For groups carrying both moment parts under a non-identity map, the
    sample covariance between the orthogonalized remainder and the kept
    complete-donor components should vanish to rounding error.
    """
    out = []
    for g in system.groups:
        e = rmap.entry(g.group)
        if e.u is None or e.t1 == 0 or e.t2 == 0:
            continue
        S = g.per_sample_stack(beta)
        P = e.apply(S)
        cross = P[:, :e.t1].T @ P[:, e.t1:] / g.n
        W = S.T @ S / g.n
        scale = float(np.max(np.abs(W)))
        out.append((g.group, float(np.max(np.abs(cross))), scale))
    return out
