# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled solver loop for the constrained-representation problem.

Statement-for-statement mirror of ``setmetric._kernel_py``; the build
disables floating-point contraction so both backends produce bit-identical
iterates. See the pure-Python module for the documented semantics.
"""

from libc.math cimport fabs, isfinite, sqrt

import numpy as np

BACKEND_NAME = "compiled"


cdef int _chol(double* a, double* low, int n, double floor) noexcept nogil:
    cdef int i, j, t
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = a[i * n + j]
            for t in range(j):
                s -= low[i * n + t] * low[j * n + t]
            if i == j:
                if s <= floor:
                    return 1
                low[i * n + i] = sqrt(s)
            else:
                low[i * n + j] = s / low[j * n + j]
    return 0


cdef void _chol_solve(double* low, double* b, double* x, double* work, int n) noexcept nogil:
    cdef int i, t
    cdef double s
    for i in range(n):
        s = b[i]
        for t in range(i):
            s -= low[i * n + t] * work[t]
        work[i] = s / low[i * n + i]
    for i in range(n - 1, -1, -1):
        s = work[i]
        for t in range(i + 1, n):
            s -= low[t * n + i] * x[t]
        x[i] = s / low[i * n + i]


cdef void _gram(double* a, double* b, double* g, int d, int m, int n) noexcept nogil:
    cdef int i, j, t
    cdef double s
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(d):
                s += a[t * m + i] * b[t * n + j]
            g[i * n + j] = s


cdef void _assemble(double* g, double* a, int k, double mu, double lam, double rho) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(k):
        for j in range(k):
            v = 2.0 * mu * g[i * k + j] + rho
            if i == j:
                v += 2.0 * lam
            a[i * k + j] = v


def admm_solve(double[:, ::1] x, double[:, ::1] y, double mu, double l1,
               double l2, double rho, double tol_constraint,
               double tol_iterate, int max_iters):
    """Same contract as ``_kernel_py.admm_solve``."""
    cdef int d = x.shape[0]
    cdef int m = x.shape[1]
    cdef int n = y.shape[1]

    buf_np = np.empty(m * m + n * n + m * n + 2 * m * m + 2 * n * n, dtype=np.float64)
    cdef double[::1] buf = buf_np
    cdef double* xtx = &buf[0]
    cdef double* yty = xtx + m * m
    cdef double* xty = yty + n * n
    cdef double* sys_x = xty + m * n
    cdef double* low_x = sys_x + m * m
    cdef double* sys_y = low_x + m * m
    cdef double* low_y = sys_y + n * n

    work_np = np.empty(4 * m + 4 * n, dtype=np.float64)
    cdef double[::1] wrk = work_np
    cdef double* alpha = &wrk[0]
    cdef double* beta = alpha + m
    cdef double* new_a = beta + n
    cdef double* new_b = new_a + m
    cdef double* rhs_a = new_b + n
    cdef double* rhs_b = rhs_a + m
    cdef double* work_m = rhs_b + n
    cdef double* work_n = work_m + m

    alpha_np = np.empty(m, dtype=np.float64)
    beta_np = np.empty(n, dtype=np.float64)
    cdef double[::1] alpha_out = alpha_np
    cdef double[::1] beta_out = beta_np

    cdef int i, j, k
    cdef int iterations = 0
    cdef bint converged = 0
    cdef bint finite = 1
    cdef bint failed = 0
    cdef double eta1 = 0.0
    cdef double eta2 = 0.0
    cdef double sum_a, sum_b, s, ta, tb, change, diff
    cdef double res_a, res_b

    with nogil:
        _gram(&x[0, 0], &x[0, 0], xtx, d, m, m)
        _gram(&y[0, 0], &y[0, 0], yty, d, n, n)
        _gram(&x[0, 0], &y[0, 0], xty, d, m, n)
        _assemble(xtx, sys_x, m, mu, l1, rho)
        _assemble(yty, sys_y, n, mu, l2, rho)
        if _chol(sys_x, low_x, m, 0.0) != 0 or _chol(sys_y, low_y, n, 0.0) != 0:
            failed = 1
        else:
            for i in range(m):
                alpha[i] = 1.0 / m
            for j in range(n):
                beta[j] = 1.0 / n
            sum_a = 0.0
            for i in range(m):
                sum_a += alpha[i]
            sum_b = 0.0
            for j in range(n):
                sum_b += beta[j]
            res_a = fabs(sum_a - 1.0)
            res_b = fabs(sum_b - 1.0)
            for k in range(1, max_iters + 1):
                ta = rho - eta1
                for i in range(m):
                    s = 0.0
                    for j in range(n):
                        s += xty[i * n + j] * beta[j]
                    rhs_a[i] = 2.0 * mu * s + ta
                _chol_solve(low_x, rhs_a, new_a, work_m, m)
                tb = rho - eta2
                for j in range(n):
                    s = 0.0
                    for i in range(m):
                        s += xty[i * n + j] * new_a[i]
                    rhs_b[j] = 2.0 * mu * s + tb
                _chol_solve(low_y, rhs_b, new_b, work_n, n)
                sum_a = 0.0
                for i in range(m):
                    sum_a += new_a[i]
                sum_b = 0.0
                for j in range(n):
                    sum_b += new_b[j]
                eta1 = eta1 + rho * (sum_a - 1.0)
                eta2 = eta2 + rho * (sum_b - 1.0)
                change = 0.0
                for i in range(m):
                    diff = fabs(new_a[i] - alpha[i])
                    if diff > change:
                        change = diff
                for j in range(n):
                    diff = fabs(new_b[j] - beta[j])
                    if diff > change:
                        change = diff
                for i in range(m):
                    alpha[i] = new_a[i]
                for j in range(n):
                    beta[j] = new_b[j]
                iterations = k
                if not (isfinite(sum_a) and isfinite(sum_b)):
                    finite = 0
                    break
                res_a = fabs(sum_a - 1.0)
                res_b = fabs(sum_b - 1.0)
                if res_a <= tol_constraint and res_b <= tol_constraint and change <= tol_iterate:
                    converged = 1
                    break

    if failed:
        return None
    for i in range(m):
        alpha_out[i] = alpha[i]
    for j in range(n):
        beta_out[j] = beta[j]
    return (
        alpha_np,
        beta_np,
        eta1,
        eta2,
        iterations,
        bool(converged),
        res_a,
        res_b,
        bool(finite),
    )
