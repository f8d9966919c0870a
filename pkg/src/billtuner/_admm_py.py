"""Pure NumPy ADMM iteration loop for the dense QP solver.

Twin of the compiled kernel in ``_admm.pyx``; both implement exactly the
same iteration so the solver behaves identically whichever one is loaded
(up to floating-point op ordering inside BLAS).

The loop solves the scaled problem

    min 1/2 x'Hx + q'x   s.t.  l <= Ax <= u

with the splitting x-update through a Cholesky factor of
``M = H + sigma*I + rho*A'A``. The penalty ``rho`` starts at 1 and is
re-balanced from the primal/dual residual ratio at the periodic checks
(refactoring M when it moves by more than 5x); the rule is deterministic,
so identical problems produce identical iterate paths. Termination and the
primal-infeasibility certificate are evaluated on residuals mapped back to
the original (unscaled) problem via ``e_row``/``d_col``/``cost_scale``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve

INF_THRESHOLD = 1e29
RHO_MIN = 1e-3
RHO_MAX = 1e5
RHO_FACTOR = 5.0

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2
STATUS_DIVERGED = 3


def _primal_infeasible(A, l, u, dy, eps_inf):
    norm = float(np.max(np.abs(dy)))
    if norm <= 1e-12:
        return False
    v = dy / norm
    u_inf = u > INF_THRESHOLD
    l_inf = l < -INF_THRESHOLD
    # a Farkas certificate cannot push on an infinite bound
    if np.any(v[u_inf] > eps_inf) or np.any(-v[l_inf] > eps_inf):
        return False
    obj = float(np.sum(u[~u_inf] * np.maximum(v[~u_inf], 0.0)))
    obj += float(np.sum(l[~l_inf] * np.minimum(v[~l_inf], 0.0)))
    if obj >= -eps_inf:
        return False
    return bool(np.max(np.abs(A.T @ v)) <= eps_inf)


def run_admm(
    L: np.ndarray,
    H: np.ndarray,
    q: np.ndarray,
    A: np.ndarray,
    ata: np.ndarray,
    l: np.ndarray,
    u: np.ndarray,
    e_row: np.ndarray,
    d_col: np.ndarray,
    cost_scale: float,
    rho: float,
    sigma: float,
    alpha: float,
    tol: float,
    eps_inf: float,
    max_iter: int,
    check_every: int,
    x: np.ndarray,
    y: np.ndarray,
):
    """Iterate in place on ``x`` and ``y``; returns (status, iters, pri, dua, comp)."""
    n = len(q)
    chol = L
    z = np.clip(A @ x, l, u)
    y_mark = y.copy()
    inv_rho = 1.0 / rho

    it = 0
    pri = dua = comp = np.inf
    while it < max_iter:
        it += 1
        w = rho * z - y
        rhs = sigma * x - q + A.T @ w
        xt = cho_solve((chol, True), rhs, overwrite_b=True, check_finite=False)
        zt = A @ xt
        x[:] = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        z_new = np.clip(zr + y * inv_rho, l, u)
        y += rho * (zr - z_new)
        z = z_new

        if it % check_every == 0 or it == max_iter:
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e100:
                return STATUS_DIVERGED, it, np.inf, np.inf, np.inf, rho
            ax = A @ x
            hx = H @ x
            aty = A.T @ y
            grad = hx + q + aty

            viol = np.maximum(ax - u, 0.0) + np.maximum(l - ax, 0.0)
            pri = float(np.max(viol * e_row))
            dua = float(np.max(np.abs(grad) / d_col) / cost_scale)
            y_up = np.maximum(y, 0.0)
            y_lo = np.maximum(-y, 0.0)
            slack_u = np.where(u > INF_THRESHOLD, 1.0 / e_row, np.abs(u - ax))
            slack_l = np.where(l < -INF_THRESHOLD, 1.0 / e_row, np.abs(ax - l))
            comp = float(np.max(np.maximum(y_up * slack_u, y_lo * slack_l)) / cost_scale)

            if pri <= tol and dua <= tol and comp <= tol:
                return STATUS_OPTIMAL, it, pri, dua, comp, rho
            if _primal_infeasible(A, l, u, y - y_mark, eps_inf):
                return STATUS_INFEASIBLE, it, pri, dua, comp, rho
            y_mark = y.copy()

            # residual balancing in scaled units
            pri_s = float(np.max(np.abs(ax - z)))
            dua_s = float(np.max(np.abs(grad)))
            den_p = max(float(np.max(np.abs(ax))), float(np.max(np.abs(z))), 1e-12)
            den_d = max(
                float(np.max(np.abs(hx))),
                float(np.max(np.abs(aty))),
                float(np.max(np.abs(q))),
                1e-12,
            )
            ratio = np.sqrt((pri_s / den_p) / max(dua_s / den_d, 1e-30))
            new_rho = min(max(rho * ratio, RHO_MIN), RHO_MAX)
            if new_rho > RHO_FACTOR * rho or new_rho < rho / RHO_FACTOR:
                rho = new_rho
                inv_rho = 1.0 / rho
                chol = np.linalg.cholesky(H + sigma * np.eye(n) + rho * ata)

    return STATUS_MAX_ITER, it, pri, dua, comp, rho
