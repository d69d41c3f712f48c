"""Dense convex QP solver: minimize 0.5 x'Hx + g'x subject to Ax <= b.

``solve`` is a primal-dual interior-point method with Mehrotra's
predictor-corrector steps, dense normal equations and Cholesky factorization.
The implementation is deterministic: the same problem with the same warm
start produces the same iterate sequence bit for bit.

``enumerate_small`` solves tiny strictly convex problems exactly by trying
every candidate active set; it exists purely as an independent reference and
shares no code with ``solve``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QpProblem:
    h: np.ndarray
    g: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n = self.g.shape[0]
        if self.h.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.h.shape}")
        if self.a.ndim != 2 or self.a.shape[1] != n:
            raise ValueError(f"A must have {n} columns, got {self.a.shape}")
        if self.b.shape != (self.a.shape[0],):
            raise ValueError("b length must match the number of rows of A")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.a.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ (self.h @ x)) + float(self.g @ x)


@dataclass(frozen=True)
class KktResiduals:
    """Relative residuals of the first-order conditions on the original data."""

    stationarity: float
    primal: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True)
class QpSolution:
    status: str
    x: np.ndarray
    duals: np.ndarray
    objective: float
    iterations: int
    kkt: KktResiduals
    trace: tuple[tuple[float, float, float], ...] = field(default=())
    message: str = ""


def kkt_residuals(problem: QpProblem, x: np.ndarray,
                  duals: np.ndarray) -> KktResiduals:
    """Relative stationarity / primal feasibility / complementarity errors.

    Each residual is scaled by the magnitude of the terms that produce it,
    never by a global constant: objectives here routinely mix O(1) flow
    costs with O(1e6) overflow penalties, and a single shared denominator
    would declare the cheap block converged while it is still far from
    optimal.  Complementarity is the relative gap between the primal
    objective and the Lagrangian dual value, which bounds the true
    suboptimality of ``x`` once stationarity and feasibility hold; the
    per-row product sum would amplify the rounding noise of recomputed
    slacks by the dual magnitudes and bottom out orders of magnitude
    higher.
    """
    b_scale = 1.0 + float(np.max(np.abs(problem.b), initial=0.0))
    hx = problem.h @ x
    quad = 0.5 * float(x @ hx)
    stat = hx + problem.g
    stat_scale = 1.0 + max(float(np.max(np.abs(hx), initial=0.0)),
                           float(np.max(np.abs(problem.g), initial=0.0)))
    if problem.m:
        at_duals = problem.a.T @ duals
        stat = stat + at_duals
        stat_scale = max(stat_scale,
                         1.0 + float(np.max(np.abs(at_duals), initial=0.0)))
        slack = problem.b - problem.a @ x
        primal = float(np.max(np.maximum(-slack, 0.0), initial=0.0)) / b_scale
        primal_obj = quad + float(problem.g @ x)
        dual_obj = -quad - float(problem.b @ duals)
        comp = abs(primal_obj - dual_obj)
        comp /= (1.0 + max(abs(primal_obj), abs(dual_obj)))
    else:
        primal = 0.0
        comp = 0.0
    return KktResiduals(
        stationarity=float(np.max(np.abs(stat), initial=0.0)) / stat_scale,
        primal=primal,
        complementarity=comp,
    )


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping v + alpha*dv >= 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _solve_unconstrained(problem: QpProblem, tol: float) -> QpSolution:
    try:
        factor = cho_factor(problem.h)
        x = cho_solve(factor, -problem.g)
    except LinAlgError:
        x, *_ = np.linalg.lstsq(problem.h, -problem.g, rcond=None)
    kkt = kkt_residuals(problem, x, np.zeros(0))
    status = STATUS_OPTIMAL if kkt.worst <= tol * 10 else STATUS_MAX_ITERATIONS
    return QpSolution(status, x, np.zeros(0), problem.objective(x), 0, kkt)


def solve(problem: QpProblem, warm_start: np.ndarray | None = None,
          tol: float = 1e-9, max_iter: int = 60) -> QpSolution:
    """Interior-point solve of a convex inequality-constrained QP.

    Returns a solution with status "optimal", "max_iterations" (best iterate,
    residuals attached) or "infeasible" (Farkas-type certificate found).
    """
    if problem.m == 0:
        return _solve_unconstrained(problem, tol)

    # Row equilibration and objective scaling keep the iteration numerically
    # well behaved for strongly mixed units; results are reported unscaled.
    row_norm = np.maximum(np.max(np.abs(problem.a), axis=1), 1e-12)
    a = problem.a / row_norm[:, None]
    b = problem.b / row_norm
    f_scale = max(1.0, float(np.max(np.abs(problem.g), initial=0.0)),
                  float(np.max(np.abs(problem.h), initial=0.0)))
    h = problem.h / f_scale
    g = problem.g / f_scale

    n, m = problem.n, problem.m
    x = np.zeros(n) if warm_start is None else np.array(warm_start, dtype=float)
    z = np.maximum(b - a @ x, 1.0)
    lam = np.ones(m)

    b_scale = 1.0 + float(np.max(np.abs(b)))
    g_scale = 1.0 + float(np.max(np.abs(g)))
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    trace: list[tuple[float, float, float]] = []

    def unscaled_solution(status: str, x_it: np.ndarray, lam_it: np.ndarray,
                          iters: int, message: str = "") -> QpSolution:
        duals = lam_it * (f_scale / row_norm)
        kkt = kkt_residuals(problem, x_it, duals)
        return QpSolution(status, x_it.copy(), duals,
                          problem.objective(x_it), iters, kkt,
                          trace=tuple(trace), message=message)

    message = "iteration limit reached"
    iters = 0
    for it in range(1, max_iter + 1):
        iters = it
        r_d = h @ x + g + a.T @ lam
        r_p = a @ x + z - b
        mu = float(z @ lam) / m
        rd_rel = float(np.max(np.abs(r_d))) / g_scale
        rp_rel = float(np.max(np.abs(r_p))) / b_scale
        trace.append((mu, rd_rel, rp_rel))

        # Terminate on the same measure that is reported: residuals of the
        # original (unscaled) problem, so callers get exactly what they asked
        # for regardless of the internal scaling.
        kkt_now = kkt_residuals(problem, x, lam * (f_scale / row_norm))
        if kkt_now.worst <= tol:
            return unscaled_solution(STATUS_OPTIMAL, x, lam, it - 1)

        score = kkt_now.worst
        if best is None or score < best[0]:
            best = (score, x.copy(), lam.copy())

        # Farkas-type certificate: a dual ray with A'y ~ 0, y >= 0, b'y < 0
        # proves primal infeasibility.
        lam_norm = float(np.sum(lam))
        if lam_norm > 1e8:
            y = lam / lam_norm
            if (float(np.max(np.abs(a.T @ y))) <= 1e-8
                    and float(b @ y) < -1e-8):
                return unscaled_solution(
                    STATUS_INFEASIBLE, x, lam, it,
                    "dual certificate of primal infeasibility")

        w = lam / z
        m_mat = h + (a.T * w) @ a
        delta = 0.0
        factor = None
        while factor is None:
            try:
                factor = cho_factor(m_mat + delta * np.eye(n), lower=True)
            except LinAlgError:
                delta = 1e-10 if delta == 0.0 else delta * 100.0
                if delta > 1e-2:
                    break
        if factor is None:
            # The barrier scaling lam/z has outgrown float64; no further
            # Newton step can be computed.  Fall through to the polish.
            message = "normal equations not factorizable"
            break

        # Predictor (affine scaling) direction.
        rhs_aff = -(h @ x + g) - a.T @ (w * r_p)
        dx_aff = cho_solve(factor, rhs_aff)
        dz_aff = -r_p - a @ dx_aff
        dlam_aff = -lam - w * dz_aff

        alpha_p = _max_step(z, dz_aff)
        alpha_d = _max_step(lam, dlam_aff)
        mu_aff = float((z + alpha_p * dz_aff) @ (lam + alpha_d * dlam_aff)) / m
        sigma = min(1.0, max((mu_aff / mu) ** 3, 1e-10)) if mu > 0 else 0.0

        # Corrector with centering.
        comp = (sigma * mu - dz_aff * dlam_aff) / z
        rhs = rhs_aff - a.T @ comp
        dx = cho_solve(factor, rhs)
        dz = -r_p - a @ dx
        dlam = (-z * lam + sigma * mu - dz_aff * dlam_aff) / z - w * dz

        tau = 0.995
        alpha_p = tau * _max_step(z, dz)
        alpha_d = tau * _max_step(lam, dlam)
        x = x + alpha_p * dx
        z = z + alpha_p * dz
        lam = lam + alpha_d * dlam

    # Iteration budget exhausted or endgame breakdown.  The final step may
    # still have landed within tolerance:
    kkt_final = kkt_residuals(problem, x, lam * (f_scale / row_norm))
    if kkt_final.worst <= tol:
        return unscaled_solution(STATUS_OPTIMAL, x, lam, iters)
    if best is None or kkt_final.worst < best[0]:
        best = (kkt_final.worst, x.copy(), lam.copy())
    score, x_b, lam_b = best

    # A near-converged iterate identifies the active set even when the
    # ill-conditioned endgame cannot push its own residuals below tol
    # (duals here reach the gradient's 1e7 range, so the Newton systems
    # stop resolving 1e-9-relative corrections).  Refitting on that set
    # with a direct equality solve recovers full accuracy; a far-from-
    # converged iterate (budget cut short) has no trustworthy active set,
    # so the refit is not attempted.
    if score <= 1e3 * tol:
        active = lam_b > np.maximum(b - a @ x_b, 0.0)
        polished = _polish_active_set(h, g, a, b, active, x_b)
        if polished is not None:
            x_p, lam_p = polished
            duals_p = lam_p * (f_scale / row_norm)
            kkt_p = kkt_residuals(problem, x_p, duals_p)
            if kkt_p.worst <= tol:
                return QpSolution(STATUS_OPTIMAL, x_p, duals_p,
                                  problem.objective(x_p), iters, kkt_p,
                                  trace=tuple(trace),
                                  message="active-set polish")
            if kkt_p.worst < score:
                return QpSolution(STATUS_MAX_ITERATIONS, x_p, duals_p,
                                  problem.objective(x_p), iters, kkt_p,
                                  trace=tuple(trace), message=message)
    return unscaled_solution(STATUS_MAX_ITERATIONS, x_b, lam_b, iters, message)


def _polish_active_set(h: np.ndarray, g: np.ndarray, a: np.ndarray,
                       b: np.ndarray, active: np.ndarray,
                       x_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Equality-KKT refit on a candidate active set.

    Solves the stationarity system with the selected rows held at equality,
    posed as a correction to ``x_ref`` and solved in minimum-norm
    least-squares form: the curvature matrix is typically singular off the
    active rows, so the equality system has a whole family of solutions,
    and the minimum-norm correction is the member that stays next to the
    feasible iterate instead of drifting along a curvature-free direction
    through the inactive constraints.  Rows whose multiplier comes out
    negative are released (at most three rounds).  Returns ``(x, duals)``
    in the caller's scaling, or None when no clean refit exists; the
    caller only accepts the pair if its residuals beat the iterate it
    started from, so a wrong guess degrades nothing.
    """
    n = x_ref.size
    idx = np.flatnonzero(active)
    for _ in range(3):
        k = idx.size
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = h
        rhs = np.empty(n + k)
        rhs[:n] = -(h @ x_ref + g)
        if k:
            a_s = a[idx]
            kkt[:n, n:] = a_s.T
            kkt[n:, :n] = a_s
            rhs[n:] = b[idx] - a_s @ x_ref
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if not np.all(np.isfinite(sol)):
            return None
        x = x_ref + sol[:n]
        nu = sol[n:]
        # Multipliers this far below zero mark a mis-selected row; barely
        # negative ones are solver noise and are clipped, which perturbs
        # stationarity by no more than their own magnitude.
        neg_floor = 1e-12 * (1.0 + float(np.max(np.abs(nu), initial=0.0)))
        drop = nu < -neg_floor
        if not np.any(drop):
            duals = np.zeros(b.size)
            if k:
                duals[idx] = np.maximum(nu, 0.0)
            return x, duals
        idx = idx[~drop]
    return None


# ---------------------------------------------------------------------------
# Exact reference for tiny problems
# ---------------------------------------------------------------------------

ENUMERATE_MAX_VARS = 8
ENUMERATE_MAX_ROWS = 12


def enumerate_small(problem: QpProblem, feas_tol: float = 1e-9) -> QpSolution:
    """Exact solve of a tiny strictly convex QP by active-set enumeration.

    Tries every subset of constraints as the active set, solves the equality
    KKT system and keeps the best candidate that is primal and dual feasible.
    H must be positive definite (the problem is then bounded, so an optimum
    exists if and only if the feasible set is non-empty).
    """
    if problem.n > ENUMERATE_MAX_VARS:
        raise ValueError(f"enumerate_small handles n <= {ENUMERATE_MAX_VARS}")
    if problem.m > ENUMERATE_MAX_ROWS:
        raise ValueError(f"enumerate_small handles m <= {ENUMERATE_MAX_ROWS}")
    try:
        cho_factor(problem.h)
    except LinAlgError:
        raise ValueError("enumerate_small requires positive definite H")

    h, g, a, b = problem.h, problem.g, problem.a, problem.b
    n, m = problem.n, problem.m
    scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    best: tuple[float, np.ndarray, np.ndarray] | None = None

    for size in range(0, min(n, m) + 1):
        for subset in combinations(range(m), size):
            idx = list(subset)
            a_s = a[idx]
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = h
            kkt[:n, n:] = a_s.T
            kkt[n:, :n] = a_s
            rhs = np.concatenate([-g, b[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
                if float(np.max(np.abs(kkt @ sol - rhs), initial=0.0)) > 1e-8 * scale:
                    continue
            x, nu = sol[:n], sol[n:]
            if np.any(nu < -feas_tol):
                continue
            if m and float(np.max(a @ x - b, initial=0.0)) > feas_tol * scale:
                continue
            obj = problem.objective(x)
            if best is None or obj < best[0] - 1e-15:
                duals = np.zeros(m)
                duals[idx] = np.maximum(nu, 0.0)
                best = (obj, x, duals)

    if best is None:
        return QpSolution(STATUS_INFEASIBLE, np.zeros(n), np.zeros(m),
                          np.inf, 0, KktResiduals(np.inf, np.inf, np.inf),
                          message="no active set yields a feasible KKT point")
    obj, x, duals = best
    return QpSolution(STATUS_OPTIMAL, x, duals, obj, 0,
                      kkt_residuals(problem, x, duals))
