# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ADMM iteration loop for the dense QP solver.

Same algorithm as ``_admm_py.run_admm`` (including the deterministic
residual-balancing rho updates) with the per-iteration linear algebra done
through direct BLAS/LAPACK calls, avoiding Python call overhead in the hot
loop. Selected at import time by ``billtuner.qp``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport dgemv, dtrsv
from scipy.linalg.cython_lapack cimport dpotrf

cnp.import_array()

cdef double INF_THRESHOLD = 1e29
cdef double RHO_MIN = 1e-3
cdef double RHO_MAX = 1e5
cdef double RHO_FACTOR = 5.0
cdef int C_OPTIMAL = 0
cdef int C_MAX_ITER = 1
cdef int C_INFEASIBLE = 2
cdef int C_DIVERGED = 3

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_INFEASIBLE = 2
STATUS_DIVERGED = 3


cdef void _matvec(double[::1, :] mat, double[::1] vec, double[::1] out,
                  int rows, int cols, double beta) noexcept nogil:
    # out = mat @ vec + beta*out with mat stored column-major (rows x cols)
    cdef int inc = 1
    cdef double one = 1.0
    cdef char no_t = b'N'
    dgemv(&no_t, &rows, &cols, &one, &mat[0, 0], &rows, &vec[0], &inc, &beta, &out[0], &inc)


cdef void _matvec_t(double[::1, :] mat, double[::1] vec, double[::1] out,
                    int rows, int cols, double beta) noexcept nogil:
    # out = mat.T @ vec + beta*out
    cdef int inc = 1
    cdef double one = 1.0
    cdef char yes_t = b'T'
    dgemv(&yes_t, &rows, &cols, &one, &mat[0, 0], &rows, &vec[0], &inc, &beta, &out[0], &inc)


cdef void _cho_solve(double[::1, :] L, double[::1] b, int n) noexcept nogil:
    # in-place solve of (L L') x = b with L lower triangular, column-major
    cdef int inc = 1
    cdef char lo = b'L'
    cdef char no_t = b'N'
    cdef char yes_t = b'T'
    cdef char non_unit = b'N'
    dtrsv(&lo, &no_t, &non_unit, &n, &L[0, 0], &n, &b[0], &inc)
    dtrsv(&lo, &yes_t, &non_unit, &n, &L[0, 0], &n, &b[0], &inc)


cdef int _refactor(double[::1, :] chol, double[::1, :] H, double[::1, :] ata,
                   double sigma, double rho, int n) noexcept nogil:
    # chol <- lower Cholesky factor of H + sigma*I + rho*ata
    cdef int i, j, info
    cdef char lo = b'L'
    for j in range(n):
        for i in range(n):
            chol[i, j] = H[i, j] + rho * ata[i, j]
        chol[j, j] += sigma
    dpotrf(&lo, &n, &chol[0, 0], &n, &info)
    return info


def run_admm(
    object L_in,
    object H_in,
    object q_in,
    object A_in,
    object ata_in,
    object l_in,
    object u_in,
    object e_row_in,
    object d_col_in,
    double cost_scale,
    double rho,
    double sigma,
    double alpha,
    double tol,
    double eps_inf,
    int max_iter,
    int check_every,
    object x_in,
    object y_in,
):
    """Iterate in place on ``x_in``/``y_in``; returns (status, iters, pri, dua, comp)."""
    cdef double[::1, :] chol = np.array(L_in, dtype=np.float64, order="F")
    cdef double[::1, :] H = np.asfortranarray(H_in, dtype=np.float64)
    cdef double[::1, :] A = np.asfortranarray(A_in, dtype=np.float64)
    cdef double[::1, :] ata = np.asfortranarray(ata_in, dtype=np.float64)
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] l = np.ascontiguousarray(l_in, dtype=np.float64)
    cdef double[::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef double[::1] e_row = np.ascontiguousarray(e_row_in, dtype=np.float64)
    cdef double[::1] d_col = np.ascontiguousarray(d_col_in, dtype=np.float64)
    cdef double[::1] x = x_in
    cdef double[::1] y = y_in

    cdef int n = H.shape[0]
    cdef int m = A.shape[0]

    cdef double[::1] z = np.empty(m)
    cdef double[::1] w = np.empty(m)
    cdef double[::1] zt = np.empty(m)
    cdef double[::1] ax = np.empty(m)
    cdef double[::1] y_mark = np.empty(m)
    cdef double[::1] v = np.empty(m)
    cdef double[::1] xt = np.empty(n)
    cdef double[::1] hx = np.empty(n)
    cdef double[::1] aty = np.empty(n)
    cdef double[::1] gx = np.empty(n)

    cdef double inv_rho = 1.0 / rho
    cdef int it = 0
    cdef int i, j, info
    cdef double pri, dua, comp, zr, znew, val, viol, norm, obj, atv
    cdef double yu, yl, su, sl
    cdef double pri_s, dua_s, den_p, den_d, ratio, new_rho
    cdef int status = C_MAX_ITER

    with nogil:
        # z = clip(A x, l, u)
        _matvec(A, x, z, m, n, 0.0)
        for i in range(m):
            if z[i] < l[i]:
                z[i] = l[i]
            elif z[i] > u[i]:
                z[i] = u[i]
            y_mark[i] = y[i]

        pri = dua = comp = 1e308
        while it < max_iter:
            it += 1
            # w = rho*z - y ; xt = cho_solve(sigma*x - q + A'w)
            for i in range(m):
                w[i] = rho * z[i] - y[i]
            for j in range(n):
                xt[j] = sigma * x[j] - q[j]
            _matvec_t(A, w, xt, m, n, 1.0)
            _cho_solve(chol, xt, n)
            _matvec(A, xt, zt, m, n, 0.0)
            for j in range(n):
                x[j] = alpha * xt[j] + (1.0 - alpha) * x[j]
            for i in range(m):
                zr = alpha * zt[i] + (1.0 - alpha) * z[i]
                znew = zr + y[i] * inv_rho
                if znew < l[i]:
                    znew = l[i]
                elif znew > u[i]:
                    znew = u[i]
                y[i] = y[i] + rho * (zr - znew)
                z[i] = znew

            if it % check_every == 0 or it == max_iter:
                # NaN/overflow guard: comparisons against NaN are false, so
                # the max-accumulators below would silently read as converged
                val = 0.0
                for j in range(n):
                    if x[j] != x[j] or fabs(x[j]) > 1e100:
                        val = 1.0
                        break
                if val == 1.0:
                    status = C_DIVERGED
                    pri = dua = comp = 1e308
                    break
                _matvec(A, x, ax, m, n, 0.0)
                _matvec(H, x, hx, n, n, 0.0)
                _matvec_t(A, y, aty, m, n, 0.0)

                # residuals in original units + scaled norms for rho balancing
                pri = 0.0
                comp = 0.0
                pri_s = 0.0
                den_p = 1e-12
                for i in range(m):
                    viol = 0.0
                    if ax[i] > u[i]:
                        viol = ax[i] - u[i]
                    elif ax[i] < l[i]:
                        viol = l[i] - ax[i]
                    if viol * e_row[i] > pri:
                        pri = viol * e_row[i]
                    val = fabs(ax[i] - z[i])
                    if val > pri_s:
                        pri_s = val
                    if fabs(ax[i]) > den_p:
                        den_p = fabs(ax[i])
                    if fabs(z[i]) > den_p:
                        den_p = fabs(z[i])
                    yu = y[i] if y[i] > 0.0 else 0.0
                    yl = -y[i] if y[i] < 0.0 else 0.0
                    su = 1.0 / e_row[i] if u[i] > INF_THRESHOLD else fabs(u[i] - ax[i])
                    sl = 1.0 / e_row[i] if l[i] < -INF_THRESHOLD else fabs(ax[i] - l[i])
                    val = yu * su
                    if yl * sl > val:
                        val = yl * sl
                    if val > comp:
                        comp = val
                comp = comp / cost_scale

                dua = 0.0
                dua_s = 0.0
                den_d = 1e-12
                for j in range(n):
                    val = hx[j] + q[j] + aty[j]
                    if fabs(val) > dua_s:
                        dua_s = fabs(val)
                    if fabs(val) / d_col[j] > dua:
                        dua = fabs(val) / d_col[j]
                    if fabs(hx[j]) > den_d:
                        den_d = fabs(hx[j])
                    if fabs(aty[j]) > den_d:
                        den_d = fabs(aty[j])
                    if fabs(q[j]) > den_d:
                        den_d = fabs(q[j])
                dua = dua / cost_scale

                if pri <= tol and dua <= tol and comp <= tol:
                    status = C_OPTIMAL
                    break

                # primal infeasibility certificate from the dual drift
                norm = 0.0
                for i in range(m):
                    val = fabs(y[i] - y_mark[i])
                    if val > norm:
                        norm = val
                if norm > 1e-12:
                    obj = 0.0
                    viol = 0.0  # sign violations on infinite bounds
                    for i in range(m):
                        v[i] = (y[i] - y_mark[i]) / norm
                        if u[i] > INF_THRESHOLD:
                            if v[i] > viol:
                                viol = v[i]
                        elif v[i] > 0.0:
                            obj += u[i] * v[i]
                        if l[i] < -INF_THRESHOLD:
                            if -v[i] > viol:
                                viol = -v[i]
                        elif v[i] < 0.0:
                            obj += l[i] * v[i]
                    if viol <= eps_inf and obj < -eps_inf:
                        _matvec_t(A, v, gx, m, n, 0.0)
                        atv = 0.0
                        for j in range(n):
                            val = fabs(gx[j])
                            if val > atv:
                                atv = val
                        if atv <= eps_inf:
                            status = C_INFEASIBLE
                            break
                for i in range(m):
                    y_mark[i] = y[i]

                # residual balancing in scaled units
                val = dua_s / den_d
                if val < 1e-30:
                    val = 1e-30
                ratio = sqrt((pri_s / den_p) / val)
                new_rho = rho * ratio
                if new_rho < RHO_MIN:
                    new_rho = RHO_MIN
                elif new_rho > RHO_MAX:
                    new_rho = RHO_MAX
                if new_rho > RHO_FACTOR * rho or new_rho < rho / RHO_FACTOR:
                    rho = new_rho
                    inv_rho = 1.0 / rho
                    info = _refactor(chol, H, ata, sigma, rho, n)
                    if info != 0:
                        status = C_MAX_ITER
                        break

    return status, it, pri, dua, comp, rho
