"""Dense convex QP solver built on an operator-splitting (ADMM) iteration.

Problem form:

    min 1/2 x'Hx + f'x   s.t.  A x <= b,  lb <= x <= ub

The inequality system and the variable box are stacked into one constraint
block ``l <= [A; I] x <= u``, Ruiz equilibration scales rows and variables,
and the cost is normalized by its largest scaled coefficient so the iterate
path is invariant under uniform positive scaling of (H, f). The x-update
factors ``M = H + sigma*I + rho*A'A``; the penalty rho is rebalanced from
the residual ratio inside the iteration loop (deterministically). After
each iteration chunk an active-set polish step solves the reduced KKT
system; when its true residuals meet the tolerance the polished solution is
returned, otherwise the splitting continues.

Everything that depends only on (H, A) -- the scaling, A'A and the initial
factorization -- lives in :class:`QpWorkspace` so receding-horizon callers
solving long sequences of structurally identical problems can reuse it.

The iteration loop itself lives in a compiled extension
(``billtuner._admm``, Cython) with a pure-NumPy twin (``billtuner._admm_py``)
used when the extension is unavailable or when ``BILLTUNER_PURE_PYTHON=1``
is set. ``benchmarks/bench_admm.py`` compares the two.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NotPSD

if os.environ.get("BILLTUNER_PURE_PYTHON", "") == "1":
    from . import _admm_py as _kernel

    USING_COMPILED_KERNEL = False
else:
    try:
        from . import _admm as _kernel  # type: ignore[attr-defined]

        USING_COMPILED_KERNEL = True
    except ImportError:
        from . import _admm_py as _kernel

        USING_COMPILED_KERNEL = False

RHO = 1.0
SIGMA = 1e-8
ALPHA = 1.6
EPS_INFEASIBLE = 1e-4
CHECK_EVERY = 25
INF_SENTINEL = 1e30

_POLISH_DELTA = 1e-7
_POLISH_REFINE = 3


@dataclass(frozen=True)
class QpProblem:
    h_matrix: np.ndarray
    f_vector: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=float)
        f = np.asarray(self.f_vector, dtype=float)
        a = np.asarray(self.a_ineq, dtype=float)
        b = np.asarray(self.b_ineq, dtype=float)
        lb = np.asarray(self.lb, dtype=float)
        ub = np.asarray(self.ub, dtype=float)
        n = len(f)
        if a.ndim != 2:
            a = a.reshape(-1, n)
        if h.shape != (n, n):
            raise ValueError("h_matrix shape inconsistent with f_vector")
        if a.shape[1] != n or len(b) != a.shape[0]:
            raise ValueError("inequality system dimensions inconsistent")
        if len(lb) != n or len(ub) != n:
            raise ValueError("box bound dimensions inconsistent")
        if np.max(np.abs(h - h.T), initial=0.0) > 1e-10:
            raise ValueError("h_matrix must be symmetric to 1e-10")
        if np.any(lb > ub):
            raise ValueError("lb must not exceed ub")
        for name, val in (("h_matrix", h), ("f_vector", f), ("a_ineq", a), ("b_ineq", b)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return len(self.f_vector)

    @property
    def m(self) -> int:
        return self.a_ineq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.h_matrix @ x + self.f_vector @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    objective: float
    status: str  # Optimal | Infeasible | MaxIter
    iterations: int
    duals: np.ndarray = field(default_factory=lambda: np.empty(0))
    residuals: tuple = (np.inf, np.inf, np.inf)  # (stationarity, primal, comp)
    # raw splitting iterates (original units); smoother warm starts than the
    # polished point for the next problem in a receding-horizon sequence
    warm_x: np.ndarray | None = None
    warm_duals: np.ndarray | None = None
    rho_final: float = RHO


class QpWorkspace:
    """Scaling and factorization data shared by solves with equal (H, A).

    Receding-horizon MPC and branch-and-bound solve long sequences of QPs
    that differ only in f, b and the variable bounds; everything computed
    here depends only on the cost matrix and constraint rows.
    """

    def __init__(self, h_matrix: np.ndarray, a_ineq: np.ndarray):
        h = np.asarray(h_matrix, dtype=float)
        a = np.asarray(a_ineq, dtype=float)
        n = h.shape[0]
        try:
            np.linalg.cholesky(h + SIGMA * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NotPSD("cost matrix is not positive semidefinite") from exc
        self.h = h
        self.a = a
        self.n = n
        self.m = a.shape[0]
        self.a_full = np.vstack([a, np.eye(n)]) if self.m else np.eye(n)
        self.d_col, self.e_row = _ruiz(h, self.a_full)
        self.a_s = np.asfortranarray((self.a_full * self.d_col[None, :]) / self.e_row[:, None])
        self.h_d = h * self.d_col[None, :] * self.d_col[:, None]
        h_max = float(np.max(np.abs(self.h_d), initial=0.0))
        # H-only normalization keeps the factorization reusable across
        # changing f; zero-H problems fall back to f-based scaling per solve
        self.cost_scale = 1.0 / h_max if h_max > 0 else None
        if self.cost_scale is not None:
            self.h_s = np.asfortranarray(self.h_d * self.cost_scale)
            self.ata = np.asfortranarray(self.a_s.T @ self.a_s)
            self.chol0 = np.linalg.cholesky(
                self.h_s + SIGMA * np.eye(n) + RHO * self.ata
            )
        else:
            self.h_s = None
            self.ata = np.asfortranarray(self.a_s.T @ self.a_s)
            self.chol0 = None

    def matches(self, p: QpProblem) -> bool:
        h_ok = self.h is p.h_matrix or np.array_equal(self.h, p.h_matrix)
        a_ok = self.a is p.a_ineq or np.array_equal(self.a, p.a_ineq)
        return h_ok and a_ok


def _ruiz(h: np.ndarray, a: np.ndarray, iters: int = 10):
    """Diagonal equilibration of the KKT blocks [[H, A'], [A, 0]].

    Returns (d_col, e_row): variables are scaled by d_col, constraint rows
    divided by e_row, driving all row/column infinity-norms toward 1.
    """
    n = h.shape[0]
    m = a.shape[0]
    dc = np.ones(n)
    dr = np.ones(m)
    abs_h = np.abs(h)
    abs_a = np.abs(a)
    for _ in range(iters):
        hs = abs_h * dc[None, :] * dc[:, None]
        as_ = abs_a * dr[:, None] * dc[None, :]
        col_norm = np.maximum(hs.max(axis=0), as_.max(axis=0))
        row_norm = as_.max(axis=1)
        col_norm = np.where(col_norm > 1e-12, col_norm, 1.0)
        row_norm = np.where(row_norm > 1e-12, row_norm, 1.0)
        dc = dc / np.sqrt(col_norm)
        dr = dr / np.sqrt(row_norm)
    return dc, 1.0 / dr


def solve_qp(
    p: QpProblem,
    tol: float = 1e-6,
    max_iter: int = 20000,
    x0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    workspace: QpWorkspace | None = None,
    rho0: float | None = None,
) -> QpSolution:
    """Solve the QP; optionally warm-start from a previous (x, duals) pair.

    ``Optimal`` guarantees primal feasibility, stationarity and
    complementarity residuals of the original problem within ``tol``.
    Raises ``NotPSD`` when ``h_matrix`` fails a regularized Cholesky.
    ``workspace`` must come from a :class:`QpWorkspace` built on the same
    (H, A) pair.
    """
    ws = workspace if workspace is not None else QpWorkspace(p.h_matrix, p.a_ineq)
    n = ws.n
    m_full = ws.m + n

    l_full = np.concatenate([np.full(ws.m, -np.inf), p.lb])
    u_full = np.concatenate([p.b_ineq, p.ub])
    l_s = np.where(np.isfinite(l_full), l_full / ws.e_row, -INF_SENTINEL)
    u_s = np.where(np.isfinite(u_full), u_full / ws.e_row, INF_SENTINEL)

    q_d = p.f_vector * ws.d_col
    if ws.cost_scale is not None:
        cost_scale = ws.cost_scale
        h_s = ws.h_s
        chol = ws.chol0
    else:
        q_max = float(np.max(np.abs(q_d), initial=0.0))
        cost_scale = 1.0 / q_max if q_max > 0 else 1.0
        h_s = np.asfortranarray(ws.h_d * cost_scale)
        chol = np.linalg.cholesky(h_s + SIGMA * np.eye(n) + RHO * ws.ata)
    q_s = q_d * cost_scale

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / ws.d_col
    if y0 is None:
        y = np.zeros(m_full)
    else:
        y = np.asarray(y0, dtype=float) * cost_scale * ws.e_row
    x = np.ascontiguousarray(x)
    y = np.ascontiguousarray(y)

    rho = RHO if rho0 is None else min(max(float(rho0), 1e-3), 1e5)
    if rho != RHO and ws.cost_scale is not None:
        chol = np.linalg.cholesky(h_s + SIGMA * np.eye(n) + rho * ws.ata)
    iters_done = 0
    chunk = 100
    restarted = False
    status_code, pri, dua, comp = 1, np.inf, np.inf, np.inf
    while iters_done < max_iter:
        budget = min(chunk, max_iter - iters_done)
        status_code, it, pri, dua, comp, rho = _kernel.run_admm(
            chol, h_s, q_s, ws.a_s, ws.ata, l_s, u_s, ws.e_row, ws.d_col, cost_scale,
            rho, SIGMA, ALPHA, tol, EPS_INFEASIBLE, int(budget), CHECK_EVERY,
            x, y,
        )
        iters_done += int(it)
        if status_code == 3:
            # iterates blew up (bad warm start / penalty excursion): one cold restart
            if restarted:
                status_code = 1
                break
            restarted = True
            x[:] = 0.0
            y[:] = 0.0
            rho = RHO
            chol = ws.chol0 if ws.cost_scale is not None else chol
            chunk = 100
            continue
        if status_code != 1:
            break
        duals_now = y / (ws.e_row * cost_scale)
        polished = _polish(p, ws, l_full, u_full, x * ws.d_col, duals_now, tol)
        if polished is None:
            # second guess: classify by proximity to the bounds instead of
            # the dual sign test (catches weakly-active rows early on)
            polished = _polish(
                p, ws, l_full, u_full, x * ws.d_col, duals_now, tol,
                proximity=1e-4,
            )
        if polished is not None:
            x_pol, duals_pol, res = polished
            return QpSolution(
                x=x_pol,
                objective=p.objective(x_pol),
                status="Optimal",
                iterations=iters_done,
                duals=duals_pol,
                residuals=res,
                warm_x=x * ws.d_col,
                warm_duals=duals_now,
                rho_final=float(rho),
            )
        chunk = min(chunk * 4, 4000)

    status = {0: "Optimal", 1: "MaxIter", 2: "Infeasible"}[int(status_code)]
    duals = y / (ws.e_row * cost_scale)
    x_out = x * ws.d_col
    return QpSolution(
        x=x_out,
        objective=p.objective(x_out),
        status=status,
        iterations=iters_done,
        duals=duals,
        residuals=(float(dua), float(pri), float(comp)),
        warm_x=x_out,
        warm_duals=duals,
        rho_final=float(rho),
    )


def _polish(p: QpProblem, ws: QpWorkspace, l_full, u_full, x, duals, tol,
            proximity: float | None = None):
    """Active-set refinement of an approximate solution (original units).

    Active box rows pin their variables at the bound and drop out of the
    linear algebra; the reduced KKT system couples only the free variables
    and the active general rows. Accepts only when the true KKT residuals
    meet ``tol`` with correctly signed multipliers. Returns
    ``(x, duals, residuals)`` or ``None`` when the guess fails.
    """
    n, m = p.n, p.m
    ax = ws.a_full @ x
    equality = (u_full - l_full) < 1e-12  # pinned rows; multiplier sign free
    if proximity is None:
        low = ((ax - l_full) < -duals) | equality
        upp = (u_full - ax) < duals
    else:
        scale_l = 1.0 + np.where(np.isfinite(l_full), np.abs(l_full), 0.0)
        scale_u = 1.0 + np.where(np.isfinite(u_full), np.abs(u_full), 0.0)
        low = ((ax - l_full) < proximity * scale_l) | equality
        upp = ((u_full - ax) < proximity * scale_u) & ~equality
    low_box = low[m:]
    upp_box = upp[m:]
    fixed = low_box | upp_box
    free = np.flatnonzero(~fixed)
    x_fix = np.where(low_box, p.lb, p.ub)

    gen_act = np.flatnonzero(low[:m] | upp[:m])
    a_g = p.a_ineq[gen_act]
    b_g = np.where(low[:m], l_full[:m], p.b_ineq if m else np.zeros(0))[gen_act]
    kg = len(gen_act)
    nf = len(free)

    x_pol = np.where(fixed, x_fix, 0.0)
    if nf == 0:
        nu = np.zeros(kg)
        if kg:
            # no free variables left; multipliers from least squares on the
            # fixed-variable stationarity is not needed for our problems
            return None
    else:
        h_ff = p.h_matrix[np.ix_(free, free)] + _POLISH_DELTA * np.eye(nf)
        rhs1 = -p.f_vector[free]
        if np.any(fixed):
            rhs1 = rhs1 - p.h_matrix[np.ix_(free, np.flatnonzero(fixed))] @ x_fix[fixed]
        kkt = np.zeros((nf + kg, nf + kg))
        kkt[:nf, :nf] = h_ff
        rhs = np.concatenate([rhs1, np.zeros(kg)])
        if kg:
            a_gf = a_g[:, free]
            kkt[:nf, nf:] = a_gf.T
            kkt[nf:, :nf] = a_gf
            kkt[nf:, nf:] = -_POLISH_DELTA * np.eye(kg)
            rhs[nf:] = b_g
            if np.any(fixed):
                rhs[nf:] -= a_g[:, np.flatnonzero(fixed)] @ x_fix[fixed]
        try:
            factor = lu_factor(kkt, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
        sol = lu_solve(factor, rhs, check_finite=False)
        for _ in range(_POLISH_REFINE):
            xf, nu = sol[:nf], sol[nf:]
            x_pol[free] = xf
            r1 = -p.f_vector[free] - (p.h_matrix[free] @ x_pol + (a_g[:, free].T @ nu if kg else 0.0))
            r2 = b_g - a_g @ x_pol if kg else np.zeros(0)
            sol = sol + lu_solve(factor, np.concatenate([r1, r2]), check_finite=False)
        xf, nu = sol[:nf], sol[nf:]
        x_pol[free] = xf
        if not np.all(np.isfinite(sol)):
            return None

    # multipliers: general active rows from nu, fixed boxes from stationarity
    duals_pol = np.zeros(m + n)
    duals_pol[gen_act] = nu
    grad = p.h_matrix @ x_pol + p.f_vector + (a_g.T @ nu if kg else 0.0)
    box_lambda = -grad
    duals_pol[m:][fixed] = box_lambda[fixed]

    # multipliers must push outward: <= 0 on lower-active, >= 0 on
    # upper-active; pinned (equality) rows may carry either sign
    act_all = np.concatenate([gen_act, m + np.flatnonzero(fixed)])
    ineq_act = act_all[~equality[act_all]]
    low_all = low[ineq_act]
    mult = duals_pol[ineq_act]
    if np.any(mult[low_all] > tol) or np.any(mult[~low_all] < -tol):
        return None
    res = kkt_residuals(p, x_pol, duals_pol)
    if max(res) <= tol:
        return x_pol, duals_pol, res
    return None


def kkt_residuals(p: QpProblem, x: np.ndarray, duals: np.ndarray):
    """Infinity-norms of the KKT blocks at (x, duals).

    ``duals`` is the stacked multiplier vector for ``[a_ineq; I]`` rows
    (inequalities first, then box rows); positive components push against
    the upper side, negative against the lower.
    """
    x = np.asarray(x, dtype=float)
    duals = np.asarray(duals, dtype=float)
    n, m = p.n, p.m
    a_full = np.vstack([p.a_ineq, np.eye(n)]) if m else np.eye(n)
    l_full = np.concatenate([np.full(m, -np.inf), p.lb])
    u_full = np.concatenate([p.b_ineq, p.ub])
    if len(duals) != m + n:
        raise ValueError("duals length must be m + n")
    ax = a_full @ x

    stationarity = float(np.max(np.abs(p.h_matrix @ x + p.f_vector + a_full.T @ duals)))
    primal = float(np.max(np.maximum(ax - u_full, 0.0) + np.maximum(l_full - ax, 0.0)))

    y_up = np.maximum(duals, 0.0)
    y_lo = np.maximum(-duals, 0.0)
    slack_u = np.where(np.isfinite(u_full), np.abs(u_full - ax), 1.0)
    slack_l = np.where(np.isfinite(l_full), np.abs(ax - l_full), 1.0)
    comp = float(np.max(np.maximum(y_up * slack_u, y_lo * slack_l)))
    return stationarity, primal, comp


def write_problem_dump(p: QpProblem, path) -> None:
    """Plain-text dump (H, f, A, b, lb, ub row-major) for external cross-checks."""
    with open(path, "w", encoding="utf-8") as fh:
        def block(name, arr):
            arr = np.atleast_2d(np.asarray(arr, dtype=float))
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

        block("H", p.h_matrix)
        block("f", p.f_vector)
        block("A", p.a_ineq if p.m else np.zeros((0, p.n)))
        block("b", p.b_ineq if p.m else np.zeros(0))
        block("lb", p.lb)
        block("ub", p.ub)
