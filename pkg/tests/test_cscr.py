import numpy as np
import pytest

from setmetric.cscr import (
    ADMMState,
    Hyperparams,
    admm_iteration,
    build_cache,
    initial_state,
    set_distance,
    solve_pair,
)
from setmetric.errors import (
    DimensionMismatch,
    EmptySet,
    InvalidConfig,
    NonFinite,
)
from setmetric.numkernel import kkt_qp_solve


class TestHyperparams:
    def test_defaults(self):
        h = Hyperparams()
        assert (h.mu1, h.mu2, h.lambda1, h.lambda2) == (0.01, 0.001, 0.1, 0.5)
        assert (h.margin, h.rho, h.max_iters) == (2.0, 1.0, 500)

    @pytest.mark.parametrize("bad", [
        dict(mu1=0.0), dict(mu2=-1.0), dict(lambda1=float("nan")),
        dict(rho=0.0), dict(tol_constraint=-1e-8), dict(max_iters=0),
    ])
    def test_rejects_nonpositive(self, bad):
        with pytest.raises(InvalidConfig):
            Hyperparams(**bad)

    def test_mu_selection(self):
        h = Hyperparams(mu1=0.7, mu2=0.3)
        assert h.mu_for(True) == 0.7
        assert h.mu_for(False) == 0.3


class TestBuildCache:
    def test_single_column_scalar_system(self):
        x = np.array([[1.0], [2.0]])
        y = np.array([[3.0], [1.0]])
        h = Hyperparams(mu1=0.05, lambda1=0.2, rho=1.5)
        cache = build_cache(x, y, 1, h)
        expect = 2 * 0.05 * 5.0 + 1.5 + 2 * 0.2  # 2*mu*|x|^2 + rho + 2*l1
        assert cache.factor_x.lower[0, 0] ** 2 == pytest.approx(expect, rel=1e-14)

    def test_orthonormal_columns_direct_construction(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
        x = q  # orthonormal columns
        h = Hyperparams(mu1=0.25, lambda1=0.5, rho=1.0)
        cache = build_cache(x, rng.standard_normal((6, 2)), 1, h)
        expect = 2 * 0.25 * np.eye(3) + np.ones((3, 3)) + np.eye(3)
        got = cache.factor_x.reconstruct()
        assert np.max(np.abs(got - expect)) <= 1e-10

    def test_branch_swap_is_mu_substitution(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        h_pos = Hyperparams(mu1=0.02, mu2=0.005)
        h_neg = Hyperparams(mu1=0.005, mu2=0.02)
        same = build_cache(x, y, 1, h_pos)
        diff = build_cache(x, y, 0, h_neg)
        assert np.array_equal(same.factor_x.lower, diff.factor_x.lower)
        assert np.array_equal(same.factor_y.lower, diff.factor_y.lower)
        assert np.array_equal(same.xty, diff.xty)

    def test_cache_fields(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        cache = build_cache(x, y, 1, Hyperparams())
        assert cache.xty.shape == (3, 2)
        assert np.array_equal(cache.ytx, cache.xty.T)
        assert np.array_equal(cache.ones_a, np.ones(3))
        assert np.array_equal(cache.ones_b, np.ones(2))

    def test_empty_set(self):
        with pytest.raises(EmptySet):
            build_cache(np.empty((3, 0)), np.ones((3, 1)), 1, Hyperparams())


class TestIteration:
    def test_scalar_forced_fixed_point(self):
        x = np.array([[1.0]])
        y = np.array([[2.0]])
        h = Hyperparams()
        cache = build_cache(x, y, 1, h)
        state = ADMMState(alpha=np.zeros(1), beta=np.zeros(1))
        for _ in range(200):
            state = admm_iteration(state, cache, h)
        assert abs(state.alpha[0] - 1.0) <= 1e-6
        assert abs(state.beta[0] - 1.0) <= 1e-6
        assert state.iteration == 200

    def test_kkt_solution_is_fixed_point(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        h = Hyperparams(mu1=0.02, lambda1=0.1, lambda2=0.2)
        alpha, beta, _ = kkt_qp_solve(x, y, h.mu1, h.lambda1, h.lambda2)
        # Consistent duals from stationarity: 2*mu*X^T r + 2*l1*a = -eta1 * e.
        r = x @ alpha - y @ beta
        eta1 = float(np.mean(-(2 * h.mu1 * (x.T @ r) + 2 * h.lambda1 * alpha)))
        eta2 = float(np.mean(-(-2 * h.mu1 * (y.T @ r) + 2 * h.lambda2 * beta)))
        state = ADMMState(alpha=alpha, beta=beta, eta1=eta1, eta2=eta2)
        cache = build_cache(x, y, 1, h)
        nxt = admm_iteration(state, cache, h)
        assert np.max(np.abs(nxt.alpha - alpha)) <= 1e-9
        assert np.max(np.abs(nxt.beta - beta)) <= 1e-9

    def test_hand_executed_iteration_2x1(self, rng):
        # D=2, m=2, n=1 with mu = lambda1 = lambda2 = rho = 1, one sweep
        # from the uniform start, using an explicit 2x2 inverse as oracle.
        x = rng.standard_normal((2, 2))
        y = rng.standard_normal((2, 1))
        h = Hyperparams(mu1=1.0, mu2=1.0, lambda1=1.0, lambda2=1.0, rho=1.0)
        ax = 2 * x.T @ x + np.ones((2, 2)) + 2 * np.eye(2)
        det = ax[0, 0] * ax[1, 1] - ax[0, 1] * ax[1, 0]
        ax_inv = np.array([[ax[1, 1], -ax[0, 1]], [-ax[1, 0], ax[0, 0]]]) / det
        ay = 2 * float(y[:, 0] @ y[:, 0]) + 1.0 + 2.0

        alpha0 = np.array([0.5, 0.5])
        beta0 = np.array([1.0])
        alpha1 = ax_inv @ (2 * (x.T @ y) @ beta0 + 1.0)
        beta1 = (2 * (y.T @ x) @ alpha1 + 1.0) / ay
        eta1 = 1.0 * (alpha1.sum() - 1.0)
        eta2 = 1.0 * (beta1.sum() - 1.0)

        cache = build_cache(x, y, 1, h)
        got = admm_iteration(initial_state(2, 1), cache, h)
        assert np.max(np.abs(got.alpha - alpha1)) <= 1e-12
        assert np.max(np.abs(got.beta - beta1)) <= 1e-12
        assert got.eta1 == pytest.approx(eta1, abs=1e-12)
        assert got.eta2 == pytest.approx(eta2, abs=1e-12)

    def test_dimension_check(self, rng):
        cache = build_cache(rng.standard_normal((3, 2)),
                            rng.standard_normal((3, 2)), 1, Hyperparams())
        with pytest.raises(DimensionMismatch):
            admm_iteration(ADMMState(alpha=np.ones(3), beta=np.ones(2)),
                           cache, Hyperparams())


class TestSolvePair:
    def test_singletons_closed_form(self, backend):
        sol = solve_pair(np.array([[0.0], [0.0]]), np.array([[3.0], [4.0]]),
                         1, Hyperparams(), backend=backend)
        assert sol.alpha.tolist() == [1.0]
        assert sol.beta.tolist() == [1.0]
        assert sol.distance == 25.0
        assert sol.converged
        assert sol.iterations_used == 0
        assert sol.constraint_residuals == (0.0, 0.0)

    def test_coincident_sets(self, backend, rng):
        x = rng.standard_normal((5, 4))
        sol = solve_pair(x, x.copy(), 1,
                         Hyperparams(lambda1=0.2, lambda2=0.2), backend=backend)
        assert sol.distance <= 1e-8
        assert np.max(np.abs(sol.alpha - 0.25)) <= 1e-6
        assert np.max(np.abs(sol.beta - 0.25)) <= 1e-6

    def test_matches_kkt_oracle(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 3))
        h = Hyperparams()
        sol = solve_pair(x, y, 1, h, backend=backend)
        alpha, beta, dist = kkt_qp_solve(x, y, h.mu1, h.lambda1, h.lambda2)
        assert np.max(np.abs(sol.alpha - alpha)) <= 1e-6
        assert np.max(np.abs(sol.beta - beta)) <= 1e-6
        assert abs(sol.distance - dist) <= 1e-6 * max(dist, 1e-12)
        assert sol.converged

    def test_mu_branch_selection(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 3))
        h = Hyperparams(mu1=0.03, mu2=0.0003)
        pos = solve_pair(x, y, 1, h, backend=backend)
        neg = solve_pair(x, y, 0, h, backend=backend)
        _, _, d_pos = kkt_qp_solve(x, y, h.mu1, h.lambda1, h.lambda2)
        _, _, d_neg = kkt_qp_solve(x, y, h.mu2, h.lambda1, h.lambda2)
        assert abs(pos.distance - d_pos) <= 1e-6 * d_pos
        assert abs(neg.distance - d_neg) <= 1e-6 * d_neg

    def test_constraint_residuals_at_convergence(self, backend, rng):
        x = rng.standard_normal((6, 5))
        y = rng.standard_normal((6, 4))
        h = Hyperparams()
        sol = solve_pair(x, y, 0, h, backend=backend)
        assert sol.converged
        assert sol.constraint_residuals[0] <= h.tol_constraint
        assert sol.constraint_residuals[1] <= h.tol_constraint
        assert abs(sol.alpha.sum() - 1.0) <= h.tol_constraint
        assert abs(sol.beta.sum() - 1.0) <= h.tol_constraint

    def test_iteration_cap_reports_not_converged(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 3))
        sol = solve_pair(x, y, 1, Hyperparams(max_iters=1), backend=backend)
        assert not sol.converged
        assert sol.iterations_used == 1

    def test_translation_invariance(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        t = rng.standard_normal((4, 1))
        h = Hyperparams()
        base = solve_pair(x, y, 1, h, backend=backend)
        shifted = solve_pair(x + t, y + t, 1, h, backend=backend)
        assert abs(shifted.distance - base.distance) <= 1e-8 * max(base.distance, 1e-12)

    def test_permutation_equivariance(self, backend, rng):
        x = rng.standard_normal((4, 5))
        y = rng.standard_normal((4, 3))
        h = Hyperparams()
        base = solve_pair(x, y, 1, h, backend=backend)
        perm = rng.permutation(5)
        permuted = solve_pair(x[:, perm], y, 1, h, backend=backend)
        assert np.max(np.abs(permuted.alpha - base.alpha[perm])) <= 1e-8
        assert abs(permuted.distance - base.distance) <= 1e-8 * max(base.distance, 1e-12)

    def test_swap_symmetry_equal_regularizers(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        h = Hyperparams(lambda1=0.3, lambda2=0.3)
        fwd = solve_pair(x, y, 1, h, backend=backend)
        rev = solve_pair(y, x, 1, h, backend=backend)
        assert abs(fwd.distance - rev.distance) <= 1e-8 * max(fwd.distance, 1e-12)
        assert np.max(np.abs(fwd.alpha - rev.beta)) <= 1e-6
        assert np.max(np.abs(fwd.beta - rev.alpha)) <= 1e-6

    def test_duplicate_columns_share_weight(self, backend, rng):
        x = rng.standard_normal((4, 3))
        xd = np.column_stack([x, x[:, 1]])
        sol = solve_pair(xd, rng.standard_normal((4, 3)), 1, Hyperparams(),
                         backend=backend)
        assert abs(sol.alpha[1] - sol.alpha[3]) <= 1e-6

    def test_determinism_bitwise(self, backend, rng):
        x = rng.standard_normal((5, 4))
        y = rng.standard_normal((5, 3))
        h = Hyperparams()
        a = solve_pair(x, y, 0, h, backend=backend)
        b = solve_pair(x.copy(), y.copy(), 0, h, backend=backend)
        assert np.array_equal(a.alpha, b.alpha)
        assert np.array_equal(a.beta, b.beta)
        assert a.distance == b.distance
        assert a.constraint_residuals == b.constraint_residuals

    def test_solve_matches_iteration_composition(self, backend, rng):
        x = rng.standard_normal((5, 4))
        y = rng.standard_normal((5, 3))
        h = Hyperparams()
        sol = solve_pair(x, y, 1, h, backend=backend)
        cache = build_cache(x, y, 1, h)
        state = initial_state(4, 3)
        for _ in range(sol.iterations_used):
            state = admm_iteration(state, cache, h)
        assert np.array_equal(state.alpha, sol.alpha)
        assert np.array_equal(state.beta, sol.beta)

    def test_non_finite_detection(self, backend):
        x = np.full((2, 3), 1e200)
        y = np.full((2, 2), -1e200)
        with pytest.raises(NonFinite):
            solve_pair(x, y, 1, Hyperparams(), backend=backend)

    def test_validation(self, rng):
        x = rng.standard_normal((3, 2))
        with pytest.raises(EmptySet):
            solve_pair(np.empty((3, 0)), x, 1, Hyperparams())
        with pytest.raises(DimensionMismatch):
            solve_pair(rng.standard_normal((4, 2)), x, 1, Hyperparams())
        with pytest.raises(InvalidConfig):
            solve_pair(x, x, 2, Hyperparams())


class TestSetDistance:
    def test_recomputes_solution_distance(self, backend, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        sol = solve_pair(x, y, 1, Hyperparams(), backend=backend)
        assert set_distance(x, y, sol) == sol.distance

    def test_three_four_five(self):
        x = np.array([[0.0], [0.0]])
        y = np.array([[3.0], [4.0]])
        sol = solve_pair(x, y, 0, Hyperparams())
        assert set_distance(x, y, sol) == 25.0

    def test_kkt_cross_check(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 3))
        h = Hyperparams()
        sol = solve_pair(x, y, 1, h)
        _, _, dist = kkt_qp_solve(x, y, h.mu1, h.lambda1, h.lambda2)
        assert set_distance(x, y, sol) == pytest.approx(dist, rel=1e-6)

    def test_shape_check(self, rng):
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        sol = solve_pair(x, y, 1, Hyperparams())
        with pytest.raises(DimensionMismatch):
            set_distance(y, x, sol)
