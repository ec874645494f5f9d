"""Set-to-set distance by class-specific collaborative representation.

Two feature sets X (d x m) and Y (d x n) are each modeled as the affine
hull of their columns. The distance between the sets is the squared
Euclidean distance between the closest admissible points of the two hulls,

    min  mu * ||X a - Y b||^2 + l1 * ||a||^2 + l2 * ||b||^2
    s.t. sum(a) = 1,  sum(b) = 1,

where the coupling weight ``mu`` depends on whether the pair is treated
as same-class (``mu1``) or different-class (``mu2``). The problem is
solved by alternating closed-form coefficient updates with scalar dual
ascent on the two sum constraints; each coefficient update reuses a
Cholesky factorization computed once per pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel
from ._backend import get_kernel
from .errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    NonFinite,
    NumericalFailure,
)
from .numkernel import CholeskyFactor, as_matrix, residual_sqnorm
from ._kernel_py import assemble_spd, gram_lists, iterate

__all__ = [
    "Hyperparams",
    "ADMMState",
    "ADMMCache",
    "CSCRSolution",
    "build_cache",
    "admm_iteration",
    "solve_pair",
    "set_distance",
]


@dataclass(frozen=True)
class Hyperparams:
    """Solver and loss hyperparameters.

    ``mu1``/``mu2`` weight the distance term for same-class and
    different-class pairs, ``lambda1``/``lambda2`` regularize the two
    coefficient vectors, ``margin`` is the hinge threshold on the squared
    distance for different-class pairs, and ``rho`` is the penalty weight
    of the augmented sum constraints.
    """

    mu1: float = 0.01
    mu2: float = 0.001
    lambda1: float = 0.1
    lambda2: float = 0.5
    margin: float = 2.0
    rho: float = 1.0
    tol_constraint: float = 1e-8
    tol_iterate: float = 1e-10
    max_iters: int = 500

    def __post_init__(self):
        for name in ("mu1", "mu2", "lambda1", "lambda2", "margin", "rho",
                     "tol_constraint", "tol_iterate"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and np.isfinite(value)):
                raise InvalidConfig(f"hyperparameter {name} must be a positive finite real")
        if not (isinstance(self.max_iters, int) and self.max_iters >= 1):
            raise InvalidConfig("max_iters must be an integer >= 1")

    def mu_for(self, same: bool) -> float:
        """Coupling weight for a same-class (True) or different-class pair."""
        return self.mu1 if same else self.mu2


@dataclass
class ADMMState:
    """Iterate of the alternating solver: coefficients, duals, counter."""

    alpha: np.ndarray
    beta: np.ndarray
    eta1: float = 0.0
    eta2: float = 0.0
    iteration: int = 0


@dataclass(frozen=True)
class ADMMCache:
    """Per-pair factorizations and cross products, reused every iteration."""

    mu: float
    factor_x: CholeskyFactor
    factor_y: CholeskyFactor
    xty: np.ndarray
    ones_a: np.ndarray
    ones_b: np.ndarray

    @property
    def ytx(self) -> np.ndarray:
        return self.xty.T


@dataclass(frozen=True)
class CSCRSolution:
    """Converged (or truncated) solution for one set pair."""

    alpha: np.ndarray
    beta: np.ndarray
    distance: float
    iterations_used: int
    constraint_residuals: tuple
    converged: bool


def _check_pair(x, y):
    for name, arr in (("X", x), ("Y", y)):
        a = np.asarray(arr)
        if a.size == 0:
            raise EmptySet(f"{name} has no columns")
    xm = as_matrix(x, "X")
    ym = as_matrix(y, "Y")
    if xm.shape[0] != ym.shape[0]:
        raise DimensionMismatch(
            f"feature dimensions differ: X has {xm.shape[0]}, Y has {ym.shape[0]}"
        )
    return xm, ym


def build_cache(x, y, y_ij: int, h: Hyperparams) -> ADMMCache:
    """Assemble and factor the two coefficient systems for a set pair.

    ``y_ij`` selects the coupling weight: 1 for a same-class pair (mu1),
    0 for a different-class pair (mu2). The factored matrices are
    ``2*mu*X^T X + rho*ones + 2*lambda1*I`` and its Y counterpart; both are
    positive definite for any valid hyperparameters.
    """
    xm, ym = _check_pair(x, y)
    if y_ij not in (0, 1):
        raise InvalidConfig(f"y_ij must be 0 or 1, got {y_ij!r}")
    mu = h.mu_for(y_ij == 1)
    d, m = xm.shape
    n = ym.shape[1]
    x_rows = xm.tolist()
    y_rows = ym.tolist()
    xtx = gram_lists(x_rows, x_rows, d, m, m)
    yty = gram_lists(y_rows, y_rows, d, n, n)
    xty = gram_lists(x_rows, y_rows, d, m, n)
    lx = numkernel.chol_lists(assemble_spd(xtx, m, mu, h.lambda1, h.rho), m, 0.0)
    ly = numkernel.chol_lists(assemble_spd(yty, n, mu, h.lambda2, h.rho), n, 0.0)
    if lx is None or ly is None:
        raise NumericalFailure("coefficient system factorization failed")
    return ADMMCache(
        mu=mu,
        factor_x=CholeskyFactor(size=m, lower=np.array(lx, dtype=np.float64)),
        factor_y=CholeskyFactor(size=n, lower=np.array(ly, dtype=np.float64)),
        xty=np.array(xty, dtype=np.float64),
        ones_a=np.ones(m),
        ones_b=np.ones(n),
    )


def admm_iteration(state: ADMMState, cache: ADMMCache, h: Hyperparams) -> ADMMState:
    """One sweep of the alternating solver.

    The alpha system is solved against the previous beta, the beta system
    against the fresh alpha, then both scalar duals take an ascent step of
    size rho on their constraint residuals.
    """
    m = cache.factor_x.size
    n = cache.factor_y.size
    if state.alpha.shape[0] != m or state.beta.shape[0] != n:
        raise DimensionMismatch("state dimensions do not match cache")
    alpha, beta, eta1, eta2, _, _, _ = iterate(
        cache.factor_x.lower.tolist(),
        cache.factor_y.lower.tolist(),
        cache.xty.tolist(),
        m,
        n,
        cache.mu,
        h.rho,
        state.alpha.tolist(),
        state.beta.tolist(),
        state.eta1,
        state.eta2,
    )
    return ADMMState(
        alpha=np.array(alpha, dtype=np.float64),
        beta=np.array(beta, dtype=np.float64),
        eta1=eta1,
        eta2=eta2,
        iteration=state.iteration + 1,
    )


def initial_state(m: int, n: int) -> ADMMState:
    """Uniform feasible coefficients with zero duals."""
    return ADMMState(alpha=np.full(m, 1.0 / m), beta=np.full(n, 1.0 / n))


def solve_pair(x, y, y_ij: int, h: Hyperparams,
               backend: str | None = None) -> CSCRSolution:
    """Solve the coefficient problem for one set pair and report the distance.

    Starts from the uniform feasible point with zero duals and iterates
    until both sum-constraint residuals fall within ``h.tol_constraint``
    and the max-norm iterate change within ``h.tol_iterate``, or until
    ``h.max_iters``; the ``converged`` flag reports which. A pair of
    singleton sets is fully constraint-forced and is returned in closed
    form without iterating.

    ``backend`` selects the solver kernel ('python' or 'compiled');
    None uses the default chosen at import.
    """
    xm, ym = _check_pair(x, y)
    if y_ij not in (0, 1):
        raise InvalidConfig(f"y_ij must be 0 or 1, got {y_ij!r}")
    m, n = xm.shape[1], ym.shape[1]
    if m == 1 and n == 1:
        alpha = np.array([1.0])
        beta = np.array([1.0])
        return CSCRSolution(
            alpha=alpha,
            beta=beta,
            distance=residual_sqnorm(xm, ym, alpha, beta),
            iterations_used=0,
            constraint_residuals=(0.0, 0.0),
            converged=True,
        )
    mu = h.mu_for(y_ij == 1)
    kernel = get_kernel(backend)
    out = kernel.admm_solve(
        xm, ym, mu, h.lambda1, h.lambda2, h.rho,
        h.tol_constraint, h.tol_iterate, h.max_iters,
    )
    if out is None:
        raise NumericalFailure("coefficient system factorization failed")
    alpha, beta, _eta1, _eta2, iterations, converged, res_a, res_b, finite = out
    if not finite:
        raise NonFinite(
            "solver iterate overflowed; hyperparameters are badly scaled "
            f"(mu={mu}, rho={h.rho})"
        )
    return CSCRSolution(
        alpha=alpha,
        beta=beta,
        distance=residual_sqnorm(xm, ym, alpha, beta),
        iterations_used=iterations,
        constraint_residuals=(res_a, res_b),
        converged=converged,
    )


def set_distance(x, y, sol: CSCRSolution) -> float:
    """Squared hull-to-hull distance recomputed from solved coefficients."""
    xm, ym = _check_pair(x, y)
    if sol.alpha.shape[0] != xm.shape[1] or sol.beta.shape[0] != ym.shape[1]:
        raise DimensionMismatch("solution coefficients do not match set sizes")
    return residual_sqnorm(xm, ym, sol.alpha, sol.beta)
