"""Dense kernel: validated arrays, Cholesky factorization, and an exact
KKT solver for the coupled affine-hull quadratic program.

Matrices and vectors are plain float64 ndarrays; the helpers here validate
shape and finiteness on the way in. All hand-rolled reductions run in a
fixed sequential order (row-major, left to right) so results are
reproducible bit-for-bit across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    NotPositiveDefinite,
    NotSymmetric,
    SingularKKT,
)

__all__ = [
    "CholeskyFactor",
    "as_matrix",
    "as_vector",
    "cholesky_factor",
    "cholesky_solve",
    "kkt_qp_solve",
    "residual_sqnorm",
]

# Pivot floor for the public factorization, relative to max diagonal entry.
_PD_FLOOR_REL = 1e-14
# Relative symmetry tolerance.
_SYM_TOL_REL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatch(f"{name}: expected a 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidConfig(f"{name}: entries must be finite")
    return np.ascontiguousarray(m)


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Validate ``a`` as a 1-D float64 array with finite entries."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionMismatch(f"{name}: expected a 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidConfig(f"{name}: entries must be finite")
    return np.ascontiguousarray(v)


# -- list-level primitives ---------------------------------------------------
#
# These operate on plain lists of floats in a fixed loop order. They are the
# single Python source of truth for the hot numerical steps; the compiled
# kernel mirrors the same operation order statement for statement.


def chol_lists(a: list, n: int, floor: float):
    """Lower Cholesky factor of ``a`` (n lists of n floats), or None.

    Returns the factor as a list of rows, or None when a pivot falls at or
    below ``floor`` (matrix not positive definite at the working precision).
    """
    low = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = a[i][j]
            for t in range(j):
                s -= low[i][t] * low[j][t]
            if i == j:
                if s <= floor:
                    return None
                low[i][i] = math.sqrt(s)
            else:
                low[i][j] = s / low[j][j]
    return low


def chol_solve_vec(low: list, b: list, n: int) -> list:
    """Solve ``(L L^T) x = b`` by forward/backward substitution."""
    y = [0.0] * n
    for i in range(n):
        s = b[i]
        for t in range(i):
            s -= low[i][t] * y[t]
        y[i] = s / low[i][i]
    x = [0.0] * n
    for i in range(n - 1, -1, -1):
        s = y[i]
        for t in range(i + 1, n):
            s -= low[t][i] * x[t]
        x[i] = s / low[i][i]
    return x


# -- public factorization API -------------------------------------------------


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with ``L @ L.T`` equal to the factored matrix."""

    size: int
    lower: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return ``L @ L.T``."""
        return self.lower @ self.lower.T


def cholesky_factor(a) -> CholeskyFactor:
    """Factor a symmetric positive definite matrix.

    Parameters
    ----------
    a : array_like
        Square matrix, symmetric to within a relative tolerance of 1e-10.

    Returns
    -------
    CholeskyFactor

    Raises
    ------
    NotSymmetric
        If the symmetry check fails.
    NotPositiveDefinite
        If any pivot falls at or below ``1e-14 * max(diag(a))``.
    """
    m = as_matrix(a, "cholesky input")
    n = m.shape[0]
    if m.shape[1] != n:
        raise DimensionMismatch(f"cholesky input must be square, got {m.shape}")
    scale = float(np.max(np.abs(m)))
    asym = float(np.max(np.abs(m - m.T)))
    if asym > _SYM_TOL_REL * max(scale, 1e-300):
        raise NotSymmetric(
            f"matrix is not symmetric: max |A - A^T| = {asym:.3e} "
            f"exceeds {_SYM_TOL_REL:.0e} * {scale:.3e}"
        )
    max_diag = float(np.max(np.diag(m)))
    if max_diag <= 0.0:
        raise NotPositiveDefinite("matrix has no positive diagonal entry")
    low = chol_lists(m.tolist(), n, _PD_FLOOR_REL * max_diag)
    if low is None:
        raise NotPositiveDefinite(
            f"pivot at or below {_PD_FLOOR_REL:.0e} * max diagonal ({max_diag:.3e})"
        )
    return CholeskyFactor(size=n, lower=np.array(low, dtype=np.float64))


def cholesky_solve(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve ``A @ S = B`` given the Cholesky factor of A.

    ``b`` may be a vector or a matrix of right-hand-side columns; the
    result has the same shape.
    """
    vec_in = np.asarray(b).ndim == 1
    rhs = as_vector(b, "rhs")[:, None] if vec_in else as_matrix(b, "rhs")
    if rhs.shape[0] != factor.size:
        raise DimensionMismatch(
            f"rhs has {rhs.shape[0]} rows, factor has size {factor.size}"
        )
    low = factor.lower.tolist()
    n = factor.size
    cols = []
    for j in range(rhs.shape[1]):
        cols.append(chol_solve_vec(low, rhs[:, j].tolist(), n))
    out = np.array(cols, dtype=np.float64).T
    return out[:, 0] if vec_in else out


# -- exact QP oracle -----------------------------------------------------------


def residual_sqnorm(x, y, alpha, beta) -> float:
    """Squared Euclidean norm of ``X @ alpha - Y @ beta``.

    Sequential reductions in index order; the deterministic companion of the
    solver outputs it is applied to.
    """
    xm = as_matrix(x, "X")
    ym = as_matrix(y, "Y")
    av = as_vector(alpha, "alpha")
    bv = as_vector(beta, "beta")
    if xm.shape[0] != ym.shape[0]:
        raise DimensionMismatch(f"X has {xm.shape[0]} rows, Y has {ym.shape[0]}")
    if xm.shape[1] != av.shape[0] or ym.shape[1] != bv.shape[0]:
        raise DimensionMismatch("coefficient lengths do not match column counts")
    xl, yl = xm.tolist(), ym.tolist()
    al, bl = av.tolist(), bv.tolist()
    total = 0.0
    for d in range(xm.shape[0]):
        xrow, yrow = xl[d], yl[d]
        vx = 0.0
        for i in range(len(al)):
            vx += xrow[i] * al[i]
        vy = 0.0
        for j in range(len(bl)):
            vy += yrow[j] * bl[j]
        r = vx - vy
        total += r * r
    return total


def _column_order(m: np.ndarray) -> np.ndarray:
    """Lexicographic column order (row 0 is the primary key)."""
    if m.shape[1] == 1:
        return np.array([0])
    return np.lexsort(m[::-1])


def kkt_qp_solve(x, y, mu: float, l1: float, l2: float):
    """Exact minimizer of the coupled affine-hull quadratic program.

    Minimizes ``mu * ||X a - Y b||^2 + l1 * ||a||^2 + l2 * ||b||^2`` subject
    to ``sum(a) = 1`` and ``sum(b) = 1`` by a single pivoted solve of the
    symmetric KKT system over ``[a; b]`` and two Lagrange multipliers.
    Strict convexity (``l1, l2 > 0``) makes the minimizer unique.

    Columns of X and Y are internally sorted into a canonical order before
    the solve and the coefficients mapped back, so permuting input columns
    permutes the output coefficients bit-exactly (for matrices with
    pairwise distinct columns) and leaves the distance unchanged.

    Returns
    -------
    (alpha, beta, distance)
        Coefficient vectors and ``||X a - Y b||^2``.
    """
    xm = as_matrix(x, "X")
    ym = as_matrix(y, "Y")
    if xm.shape[0] != ym.shape[0]:
        raise DimensionMismatch(f"X has {xm.shape[0]} rows, Y has {ym.shape[0]}")
    if not (mu > 0.0 and l1 > 0.0 and l2 > 0.0):
        raise InvalidConfig("mu, l1, l2 must all be positive")
    m, n = xm.shape[1], ym.shape[1]

    if m == 1 and n == 1:
        # Both coefficients are forced by their sum constraints.
        alpha = np.array([1.0])
        beta = np.array([1.0])
        return alpha, beta, residual_sqnorm(xm, ym, alpha, beta)

    ox = _column_order(xm)
    oy = _column_order(ym)
    xc = xm[:, ox]
    yc = ym[:, oy]

    k = np.zeros((m + n + 2, m + n + 2))
    k[:m, :m] = 2.0 * mu * (xc.T @ xc) + 2.0 * l1 * np.eye(m)
    k[:m, m : m + n] = -2.0 * mu * (xc.T @ yc)
    k[m : m + n, :m] = k[:m, m : m + n].T
    k[m : m + n, m : m + n] = 2.0 * mu * (yc.T @ yc) + 2.0 * l2 * np.eye(n)
    k[:m, m + n] = 1.0
    k[m + n, :m] = 1.0
    k[m : m + n, m + n + 1] = 1.0
    k[m + n + 1, m : m + n] = 1.0
    rhs = np.zeros(m + n + 2)
    rhs[m + n] = 1.0
    rhs[m + n + 1] = 1.0
    try:
        z = np.linalg.solve(k, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularKKT(f"KKT system is numerically singular: {exc}") from exc
    if not np.all(np.isfinite(z)):
        raise SingularKKT("KKT solve produced non-finite values")

    ac, bc = z[:m], z[m : m + n]
    distance = residual_sqnorm(xc, yc, ac, bc)
    alpha = np.empty(m)
    alpha[ox] = ac
    beta = np.empty(n)
    beta[oy] = bc
    return alpha, beta, distance
