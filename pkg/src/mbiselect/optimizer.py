"""SCAD-penalized GMM objective and its nonlinear conjugate-gradient solver.

The objective is the reduced quadratic form of the stacked group moments in
their (recomputed-at-every-evaluation) block weights, plus a SCAD penalty.
Gradients are central differences. The weight blocks are quadratic in the
coefficients, which makes single-coordinate perturbations and line-search
evaluations cheap: each needs only small Gram updates plus one solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linmod
from .errors import InitFailed, LineSearchFailed, NonFiniteObjective
from .estimating import EstimatingSystem, build_system
from .imputation import ImputationSet
from .patterns import DataSet, PatternIndex
from .reduction import RCOND_TRIGGER, ReductionMap, build_reduction, identity_reduction

GRAD_REL_STEP = 1e-6
DEFAULT_THRESHOLD = 1e-2


@dataclass(frozen=True)
class PenaltySpec:
    """SCAD penalty parameters; shape a must exceed 2."""

    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.a <= 2:
            raise ValueError("SCAD shape parameter must exceed 2")
        if self.lam < 0:
            raise ValueError("penalty level must be nonnegative")


def scad(b, spec: PenaltySpec):
    """SCAD penalty value at b >= 0 (linear, quadratic spline, flat tail)."""
    b = np.asarray(b, dtype=float)
    lam, a = spec.lam, spec.a
    out = np.where(
        b <= lam,
        lam * b,
        np.where(
            b <= a * lam,
            (2 * a * lam * b - b * b - lam * lam) / (2 * (a - 1)),
            (a + 1) * lam * lam / 2,
        ),
    )
    return out if out.ndim else float(out)


def scad_prime(b, spec: PenaltySpec):
    """SCAD derivative at b >= 0: lam, then (a*lam - b)/(a - 1), then 0."""
    b = np.asarray(b, dtype=float)
    lam, a = spec.lam, spec.a
    out = np.where(
        b <= lam,
        lam,
        np.where(b <= a * lam, (a * lam - b) / (a - 1), 0.0),
    )
    return out if out.ndim else float(out)


def central_diff_gradient(f, x, rel_step=GRAD_REL_STEP):
    """Plain central-difference gradient with per-coordinate steps."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        grad[j] = (f(xp) - f(xm)) / (2 * h)
    return grad


def conjugate_direction(g_new, g_old, s_prev, denom_rel_tol=1e-12):
    """Next conjugate direction from the current and previous gradients.

    Uses the ratio with denominator s_prev . (g_old - g_new); falls back to
    steepest descent on a vanishing denominator or a non-descent direction.

    Returns (direction, restarted).
    """
    denom = float(s_prev @ (g_old - g_new))
    scale = float(np.linalg.norm(s_prev) * (np.linalg.norm(g_old) + np.linalg.norm(g_new)))
    if abs(denom) < denom_rel_tol * scale or scale == 0.0:
        return -g_new, True
    gamma = -float(g_new @ g_new) / denom
    s = -g_new + gamma * s_prev
    if float(s @ g_new) >= 0.0:
        return -g_new, True
    return s, False


def line_search(phi, f0, init_step=1.0, rel_tol=1e-6, max_backtracks=60, grow=2.0,
                max_expands=60):
    """Bracketing plus golden-section minimization of phi on alpha > 0.

    phi(0) must equal f0. Non-finite evaluations count as +inf. Raises
    LineSearchFailed when backtracking cannot find any improvement.

    Returns (alpha, phi(alpha), n_evals).
    """

    def safe(alpha):
        try:
            v = phi(alpha)
        except (NonFiniteObjective, np.linalg.LinAlgError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    n_evals = 0
    best = [0.0, f0]

    def safe_track(alpha):
        nonlocal n_evals
        v = safe(alpha)
        n_evals += 1
        if v < best[1]:
            best[0], best[1] = alpha, v
        return v

    step = max(init_step, 1e-300)
    fb = np.inf
    for _ in range(max_backtracks):
        fb = safe_track(step)
        if fb < f0:
            break
        step /= 2.0
    else:
        raise LineSearchFailed(f"no improvement after {max_backtracks} backtracks")

    a = 0.0
    b, fb = step, fb
    c = b * grow
    fc = safe_track(c)
    for _ in range(max_expands):
        if fc >= fb:
            break
        a = b
        b, fb = c, fc
        c = c * grow
        fc = safe_track(c)
    else:
        # objective kept falling out to the expansion bound: take the best seen
        return best[0], best[1], n_evals

    # golden-section on [a, c] with interior minimum at b
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = c - invphi * (c - a)
    x2 = a + invphi * (c - a)
    f1 = safe_track(x1)
    f2 = safe_track(x2)
    while (c - a) > rel_tol * (abs(best[0]) + rel_tol):
        if f1 <= f2:
            c = x2
            x2, f2 = x1, f1
            x1 = c - invphi * (c - a)
            f1 = safe_track(x1)
        else:
            a = x1
            x1, f1 = x2, f2
            x2 = a + invphi * (c - a)
            f2 = safe_track(x2)
    return best[0], best[1], n_evals


@dataclass
class CGResult:
    x: np.ndarray
    fx: float
    iterations: int
    restarts: int
    converged: bool
    status: str
    trace: list[float] = field(default_factory=list)


def minimize_cg(value, gradient, x0, *, tol=1e-4, max_iter=500, line_factory=None,
                on_iteration=None, ls_rel_tol=1e-6, max_backtracks=60, callback=None):
    """Nonlinear conjugate gradient with exact-ish line search.

    ``on_iteration(k, x, floor)`` runs before each iteration's evaluations
    (the fit uses it to re-anchor the reduction map; ``floor`` is the best
    recorded objective value, None on the first iteration). A step is
    accepted only if it improves on that floor, which keeps the published
    trace monotone across re-anchoring.
    """
    x = np.asarray(x0, dtype=float).copy()
    restarts = 0
    s_prev = None
    g_prev = None
    alpha_prev = None
    trace: list[float] = []
    status, converged = "max_iter", False
    iterations = 0

    for k in range(1, max_iter + 1):
        if on_iteration is not None:
            on_iteration(k, x, trace[-1] if trace else None)
        f = value(x)
        if not np.isfinite(f):
            raise NonFiniteObjective(f"objective not finite at iteration {k}")
        if not trace:
            trace.append(float(f))
        g = gradient(x)

        if s_prev is None:
            s = -g
        else:
            s, restarted = conjugate_direction(g, g_prev, s_prev)
            restarts += restarted

        if callback is not None:
            callback(k, x.copy(), g.copy(), s.copy())

        if not np.any(s):
            status, converged = "tol", True
            break

        phi = line_factory(x, s) if line_factory is not None else (
            lambda alpha, x=x, s=s: value(x + alpha * s)
        )
        init = alpha_prev * 2.0 if alpha_prev else min(1.0, 1.0 / (1.0 + float(np.linalg.norm(s))))
        floor = trace[-1]
        try:
            alpha, f_new, _ = line_search(phi, f, init_step=init, rel_tol=ls_rel_tol,
                                          max_backtracks=max_backtracks)
        except LineSearchFailed:
            status, converged = "line_search_failed", False
            iterations = k
            break

        if f_new >= floor - 1e-12 * (1.0 + abs(floor)):
            # no progress beyond the best recorded value (re-anchoring stall)
            status, converged = "stalled", True
            iterations = k
            break

        delta = alpha * float(np.max(np.abs(s)))
        x = x + alpha * s
        trace.append(float(f_new))
        g_prev, s_prev, alpha_prev = g, s, alpha
        iterations = k
        if delta < tol:
            status, converged = "tol", True
            break

    fx = trace[-1] if trace else float(value(x))
    return CGResult(x=x, fx=fx, iterations=iterations, restarts=restarts,
                    converged=converged, status=status, trace=trace)


def _solve_quad(W, g):
    """g^T W^{-1} g with a least-squares fallback for singular W."""
    if W.size == 0:
        return 0.0
    try:
        sol = np.linalg.solve(W, g)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(W, g, rcond=None)[0]
    val = float(g @ sol)
    return val


class GmmObjective:
    """Reduced penalized GMM objective with fast line and gradient paths.

    The reduction map is treated as fixed between calls to
    :meth:`set_reduction`; moment means and weights are recomputed at every
    evaluated point.
    """

    def __init__(self, system: EstimatingSystem, penalty: PenaltySpec,
                 rmap: ReductionMap | None = None):
        self.system = system
        self.penalty = penalty
        self.set_reduction(rmap if rmap is not None else identity_reduction(system))

    def set_reduction(self, rmap: ReductionMap):
        self.rmap = rmap
        self._uzy = []
        self._ujac = []
        for g in self.system.groups:
            e = rmap.entry(g.group)
            self._uzy.append(e.apply(g.zy))
            self._ujac.append(e.apply(g.jac) if e.u is None else e.u @ g.jac)

    def penalty_sum(self, beta):
        if self.penalty.lam == 0.0:
            return 0.0
        return float(np.sum(scad(np.abs(beta), self.penalty)))

    def quad_value(self, beta):
        """Quadratic-form part only."""
        total = 0.0
        for gi, g in enumerate(self.system.groups):
            e = self.rmap.entry(g.group)
            P = e.apply(g.per_sample_stack(beta))
            W = P.T @ P / g.n
            gbar = self._uzy[gi] - self._ujac[gi] @ beta
            total += _solve_quad(W, gbar)
        if not np.isfinite(total):
            raise NonFiniteObjective("moment quadratic form overflowed")
        return total

    def value(self, beta):
        return self.quad_value(beta) + self.penalty_sum(beta)

    def line_function(self, beta, s):
        """phi(alpha) = value(beta + alpha*s) via precomputed Gram matrices."""
        parts = []
        for gi, g in enumerate(self.system.groups):
            e = self.rmap.entry(g.group)
            n = g.n
            S0 = np.empty((n, g.dim))
            S1 = np.empty((n, g.dim))
            for b in g.blocks:
                sl = slice(b.offset, b.offset + b.dim)
                S0[:, sl] = b.z * (g.y - b.x @ beta)[:, None]
                S1[:, sl] = b.z * (b.x @ s)[:, None]
            P0, P1 = e.apply(S0), e.apply(S1)
            G00 = P0.T @ P0 / n
            G01 = P0.T @ P1 / n
            G11 = P1.T @ P1 / n
            m0 = self._uzy[gi] - self._ujac[gi] @ beta
            m1 = self._ujac[gi] @ s
            parts.append((G00, G01 + G01.T, G11, m0, m1))
        pen = self.penalty

        def phi(alpha):
            total = 0.0
            for G00, G01s, G11, m0, m1 in parts:
                W = G00 - alpha * G01s + (alpha * alpha) * G11
                gv = m0 - alpha * m1
                total += _solve_quad(W, gv)
            if pen.lam > 0.0:
                total += float(np.sum(scad(np.abs(beta + alpha * s), pen)))
            if not np.isfinite(total):
                raise NonFiniteObjective("line evaluation overflowed")
            return total

        return phi

    def gradient(self, beta, rel_step=GRAD_REL_STEP):
        """Central-difference gradient with per-coordinate steps.

        Equals differencing :meth:`value` coordinate-by-coordinate; the
        weight blocks are quadratic in each coordinate, so the perturbed
        blocks are assembled from Gram cross-terms instead of full passes.
        """
        beta = np.asarray(beta, dtype=float)
        p = beta.size
        h = rel_step * np.maximum(1.0, np.abs(beta))
        quad_plus = np.zeros(p)
        quad_minus = np.zeros(p)

        for gi, g in enumerate(self.system.groups):
            e = self.rmap.entry(g.group)
            n, d = g.n, g.dim
            S0 = g.per_sample_stack(beta)
            P0 = e.apply(S0)
            dp = P0.shape[1]
            W0 = P0.T @ P0 / n
            m0 = self._uzy[gi] - self._ujac[gi] @ beta
            ujac = self._ujac[gi]

            chunk = max(1, min(p, int(3e6 // max(n * d, 2 * dp * dp, 1))))
            for lo in range(0, p, chunk):
                cols = np.arange(lo, min(lo + chunk, p))
                c = cols.size
                T = np.empty((n, c, d))
                for b in g.blocks:
                    sl = slice(b.offset, b.offset + b.dim)
                    T[:, :, sl] = b.z[:, None, :] * b.x[:, cols, None]
                if e.u is None:
                    P1 = T
                else:
                    P1 = np.tensordot(T, e.u, axes=([2], [1]))  # (n, c, dp)
                C = np.tensordot(P0, P1, axes=([0], [0])) / n   # (dp, c, dp)
                C = np.moveaxis(C, 1, 0)                        # (c, dp, dp)
                P1m = np.moveaxis(P1, 1, 0)                     # (c, n, dp)
                D = P1m.transpose(0, 2, 1) @ P1m / n            # (c, dp, dp)

                hc = h[cols][:, None, None]
                Csym = C + C.transpose(0, 2, 1)
                W_all = np.concatenate(
                    [W0[None] - hc * Csym + hc * hc * D,
                     W0[None] + hc * Csym + hc * hc * D], axis=0)
                gcols = ujac[:, cols].T                          # (c, dp)
                g_all = np.concatenate(
                    [m0[None] - h[cols, None] * gcols,
                     m0[None] + h[cols, None] * gcols], axis=0)
                try:
                    sol = np.linalg.solve(W_all, g_all[:, :, None])[:, :, 0]
                except np.linalg.LinAlgError:
                    sol = np.stack([
                        np.linalg.lstsq(W_all[i], g_all[i], rcond=None)[0]
                        for i in range(W_all.shape[0])
                    ])
                quads = np.einsum("ij,ij->i", g_all, sol)
                quad_plus[cols] += quads[:c]
                quad_minus[cols] += quads[c:]

        if not (np.all(np.isfinite(quad_plus)) and np.all(np.isfinite(quad_minus))):
            raise NonFiniteObjective("gradient evaluation overflowed")

        grad = (quad_plus - quad_minus) / (2 * h)
        if self.penalty.lam > 0.0:
            # only the j-th penalty term moves under a perturbation of coordinate j
            bp = scad(np.abs(beta + h), self.penalty)
            bm = scad(np.abs(beta - h), self.penalty)
            grad += (bp - bm) / (2 * h)
        return grad


def column_scales(data: DataSet) -> np.ndarray:
    """Per-column standard deviation over observed entries (1 where degenerate)."""
    with np.errstate(invalid="ignore"):
        sd = np.nanstd(data.values, axis=0)
    sd = np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)
    return sd


def initial_beta(data: DataSet, idx: PatternIndex, seed: int = 0) -> np.ndarray:
    """Lasso initializer on complete observations.

    Without a complete-case group, the largest group's observed columns are
    used and the remaining coordinates start at zero.
    """
    p = data.n_covariates
    complete = idx.complete_group
    if complete is not None:
        rows = idx.members[complete]
        cols = np.arange(p)
    else:
        r = int(np.argmax(idx.group_sizes))
        rows = idx.members[r]
        cols = idx.observed_sets[r]
    if rows.size < 2:
        raise InitFailed("not enough rows to initialize coefficients")
    X = data.values[np.ix_(rows, cols)]
    y = data.response[rows]
    _, coef = linmod.lasso_coordinate_descent(X, y, seed=seed)
    beta0 = np.zeros(p)
    beta0[cols] = coef
    return beta0


@dataclass
class FitResult:
    beta_hat: np.ndarray            # thresholded coefficients (exact zeros)
    beta_raw: np.ndarray            # dense optimizer iterate
    active_set: np.ndarray          # indices of nonzero thresholded coefficients
    iterations: int
    restarts: int
    converged: bool
    status: str
    objective_trace: np.ndarray
    lam: float
    penalty_a: float
    threshold: float
    column_scale: np.ndarray
    reduction_summary: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def df(self) -> int:
        return int(self.active_set.size)


def threshold_coefficients(beta, scale, threshold=DEFAULT_THRESHOLD):
    """Zero out coordinates small on the standardized scale."""
    keep = np.abs(beta) * scale > threshold
    out = np.where(keep, beta, 0.0)
    return out, np.flatnonzero(keep)


def fit(data: DataSet, idx: PatternIndex, views: ImputationSet, lam: float, *,
        penalty_a: float = 3.7, system: EstimatingSystem | None = None,
        beta0: np.ndarray | None = None, eps: float = 1e-4, max_iter: int = 500,
        threshold: float = DEFAULT_THRESHOLD, seed: int = 0,
        rcond_trigger: float | None = None) -> FitResult:
    """Minimize the reduced SCAD-penalized GMM objective for one penalty level.

    The reduction map is re-anchored at the current iterate before every
    conjugate-gradient iteration and held fixed through its line search.
    """
    trigger = RCOND_TRIGGER if rcond_trigger is None else rcond_trigger
    if system is None:
        system = build_system(data, idx, views)
    if beta0 is None:
        beta0 = initial_beta(data, idx, seed=seed)
    penalty = PenaltySpec(lam=lam, a=penalty_a)
    engine = GmmObjective(system, penalty)
    anchored = {"rmap": None}

    def on_iteration(_k, x, floor):
        candidate = build_reduction(system, x, trigger=trigger)
        if floor is None or anchored["rmap"] is None:
            engine.set_reduction(candidate)
            anchored["rmap"] = candidate
            return
        previous = anchored["rmap"]
        engine.set_reduction(candidate)
        # adopting the new anchor must not lift the objective above the
        # recorded trace, or the monotone-descent contract would force a stall
        if engine.value(x) > floor:
            engine.set_reduction(previous)
        else:
            anchored["rmap"] = candidate

    result = minimize_cg(
        engine.value, engine.gradient, beta0,
        tol=eps, max_iter=max_iter,
        line_factory=engine.line_function,
        on_iteration=on_iteration,
    )

    scale = column_scales(data)
    beta_hat, active = threshold_coefficients(result.x, scale, threshold)
    return FitResult(
        beta_hat=beta_hat,
        beta_raw=result.x,
        active_set=active,
        iterations=result.iterations,
        restarts=result.restarts,
        converged=result.converged,
        status=result.status,
        objective_trace=np.asarray(result.trace),
        lam=lam,
        penalty_a=penalty_a,
        threshold=threshold,
        column_scale=scale,
        reduction_summary=engine.rmap.summary_rows(),
    )


def objective(system: EstimatingSystem, beta, lam, a=3.7, rmap=None) -> float:
    """Convenience evaluation of the reduced penalized objective."""
    engine = GmmObjective(system, PenaltySpec(lam=lam, a=a), rmap=rmap)
    return engine.value(np.asarray(beta, dtype=float))


def numeric_gradient(system: EstimatingSystem, beta, lam, a=3.7, rmap=None,
                     rel_step=GRAD_REL_STEP) -> np.ndarray:
    """Central-difference gradient of the reduced penalized objective."""
    engine = GmmObjective(system, PenaltySpec(lam=lam, a=a), rmap=rmap)
    return engine.gradient(np.asarray(beta, dtype=float), rel_step=rel_step)
