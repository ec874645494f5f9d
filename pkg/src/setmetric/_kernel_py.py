"""Pure-Python fallback for the constrained-representation solver loop.

This module is the reference semantics for the hot path: Gram matrices,
the two regularized SPD systems, and the alternating coefficient/dual
updates. ``setmetric._kernel`` (the compiled extension) mirrors the exact
statement order of these loops; with contraction disabled in the C build
the two backends produce bit-identical iterates.

Everything here works on plain Python floats in fixed loop order, which
keeps results reproducible across runs and platforms.
"""

from __future__ import annotations

import math

import numpy as np

from .numkernel import chol_lists, chol_solve_vec

BACKEND_NAME = "python"


def gram_lists(a_rows: list, b_rows: list, d: int, m: int, n: int) -> list:
    """``A^T @ B`` for column matrices given as lists of rows (d x m, d x n)."""
    g = [[0.0] * n for _ in range(m)]
    for i in range(m):
        gi = g[i]
        for j in range(n):
            s = 0.0
            for t in range(d):
                s += a_rows[t][i] * b_rows[t][j]
            gi[j] = s
    return g


def assemble_spd(g: list, k: int, mu: float, lam: float, rho: float) -> list:
    """``2*mu*G + rho*ones + 2*lam*I`` for a k x k Gram matrix G."""
    a = [[0.0] * k for _ in range(k)]
    for i in range(k):
        ai = a[i]
        gi = g[i]
        for j in range(k):
            v = 2.0 * mu * gi[j] + rho
            if i == j:
                v += 2.0 * lam
            ai[j] = v
    return a


def iterate(
    low_x: list,
    low_y: list,
    xty: list,
    m: int,
    n: int,
    mu: float,
    rho: float,
    alpha: list,
    beta: list,
    eta1: float,
    eta2: float,
):
    """One alternating update sweep.

    Solves the alpha system against the previous beta, the beta system
    against the fresh alpha, then takes both dual ascent steps. Returns
    ``(alpha, beta, eta1, eta2, sum_alpha, sum_beta, max_change)``.
    """
    ta = rho - eta1
    rhs_a = [0.0] * m
    for i in range(m):
        row = xty[i]
        s = 0.0
        for j in range(n):
            s += row[j] * beta[j]
        rhs_a[i] = 2.0 * mu * s + ta
    new_a = chol_solve_vec(low_x, rhs_a, m)

    tb = rho - eta2
    rhs_b = [0.0] * n
    for j in range(n):
        s = 0.0
        for i in range(m):
            s += xty[i][j] * new_a[i]
        rhs_b[j] = 2.0 * mu * s + tb
    new_b = chol_solve_vec(low_y, rhs_b, n)

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
        diff = abs(new_a[i] - alpha[i])
        if diff > change:
            change = diff
    for j in range(n):
        diff = abs(new_b[j] - beta[j])
        if diff > change:
            change = diff
    return new_a, new_b, eta1, eta2, sum_a, sum_b, change


def admm_solve(
    x: np.ndarray,
    y: np.ndarray,
    mu: float,
    l1: float,
    l2: float,
    rho: float,
    tol_constraint: float,
    tol_iterate: float,
    max_iters: int,
):
    """Run the full solver loop for one set pair.

    ``x`` and ``y`` are float64 feature matrices (columns are samples).
    Starts from the uniform feasible point with zero duals and stops when
    both constraint residuals fall within ``tol_constraint`` and the
    max-norm iterate change within ``tol_iterate``, or at ``max_iters``.

    Returns ``(alpha, beta, eta1, eta2, iterations, converged, res_a,
    res_b, finite)``; ``finite`` is False when an iterate overflowed.
    """
    d, m = x.shape
    n = y.shape[1]
    x_rows = x.tolist()
    y_rows = y.tolist()
    xtx = gram_lists(x_rows, x_rows, d, m, m)
    yty = gram_lists(y_rows, y_rows, d, n, n)
    xty = gram_lists(x_rows, y_rows, d, m, n)
    low_x = chol_lists(assemble_spd(xtx, m, mu, l1, rho), m, 0.0)
    low_y = chol_lists(assemble_spd(yty, n, mu, l2, rho), n, 0.0)
    if low_x is None or low_y is None:
        return None

    alpha = [1.0 / m] * m
    beta = [1.0 / n] * n
    eta1 = 0.0
    eta2 = 0.0
    iterations = 0
    converged = False
    res_a = abs(sum(alpha) - 1.0)
    res_b = abs(sum(beta) - 1.0)
    finite = True
    for k in range(1, max_iters + 1):
        alpha, beta, eta1, eta2, sum_a, sum_b, change = iterate(
            low_x, low_y, xty, m, n, mu, rho, alpha, beta, eta1, eta2
        )
        iterations = k
        if not (math.isfinite(sum_a) and math.isfinite(sum_b)):
            finite = False
            break
        res_a = abs(sum_a - 1.0)
        res_b = abs(sum_b - 1.0)
        if res_a <= tol_constraint and res_b <= tol_constraint and change <= tol_iterate:
            converged = True
            break
    return (
        np.array(alpha, dtype=np.float64),
        np.array(beta, dtype=np.float64),
        eta1,
        eta2,
        iterations,
        converged,
        res_a,
        res_b,
        finite,
    )
