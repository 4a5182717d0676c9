import numpy as np
import pytest
import scipy.linalg

from nlqre.game import RationalityParams, payoff_apply
from nlqre.newton import ConvergenceError, KktState, build_xi, kkt_residual, newton_solve
from nlqre.treeplex import Treeplex, behavioral_to_sequence, sequence_to_behavioral
from nlqre.zoo import matrix_game, random_game, rock_paper_scissors

from conftest import random_behavioral


def softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def qre_fixed_point(A, lam_u, lam_v, damping=0.2, iters=20000):
    """Damped logit-response iteration for a matrix game (min rows, max columns)."""
    n, m = A.shape
    x, y = np.full(n, 1 / n), np.full(m, 1 / m)
    for _ in range(iters):
        x = (1 - damping) * x + damping * softmax(-(A @ y) / lam_u)
        y = (1 - damping) * y + damping * softmax((A.T @ x) / lam_v)
    return x, y


class TestXi:
    def test_two_action_example(self):
        t = Treeplex([0], [[1, 2]])
        X = build_xi(t, np.array([1.0, 0.5, 0.5]), np.array([1.0])).toarray()
        np.testing.assert_allclose(X[1:, 1:], np.diag([2.0, 2.0]))
        np.testing.assert_allclose(X[0, 1:], [-1.0, -1.0])
        np.testing.assert_allclose(X, X.T)

    def test_matches_entropy_hessian(self, rng):
        # dense oracle: finite-difference Hessian of the unconstrained entropy
        t = random_game(2).tu
        u = behavioral_to_sequence(t, random_behavioral(t, rng, low=0.2))
        lam = rng.uniform(0.5, 2.0, t.n_infosets)
        from nlqre.treeplex import dilated_entropy
        n = t.n_sequences
        H = np.zeros((n, n))
        h = 1e-4
        for i in range(n):
            for j in range(n):
                ei = np.zeros(n)
                ej = np.zeros(n)
                ei[i] = h
                ej[j] = h
                f = lambda d: dilated_entropy(t, u + d, lam)
                H[i, j] = (f(ei + ej) - f(ei - ej) - f(-ei + ej) + f(-ei - ej)) / (4 * h * h)
        X = build_xi(t, u, lam).toarray()
        np.testing.assert_allclose(X[1:, 1:], H[1:, 1:], rtol=1e-5, atol=1e-5)

    def test_u_is_null_vector_of_full_matrix(self, rng):
        t = random_game(3).tu
        u = behavioral_to_sequence(t, random_behavioral(t, rng))
        X = build_xi(t, u, rng.uniform(0.5, 2, t.n_infosets)).toarray()
        np.testing.assert_allclose(X @ u, 0.0, atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_reduced_block_positive_definite(self, seed):
        rng = np.random.default_rng(seed)
        t = random_game(seed, 5, 5).tu
        u = behavioral_to_sequence(t, random_behavioral(t, rng, low=0.01))
        X = build_xi(t, u, rng.uniform(0.01, 10, t.n_infosets)).reduced.toarray()
        np.testing.assert_allclose(X, X.T)
        assert scipy.linalg.eigvalsh(X).min() > 0

    def test_weighted_rows_are_weakly_dominant(self, rng):
        # |X_aa| u_a >= sum_b |X_ab| u_b on every row of the full matrix
        t = random_game(6, 5, 5).tu
        u = behavioral_to_sequence(t, random_behavioral(t, rng))
        X = build_xi(t, u, rng.uniform(0.5, 2, t.n_infosets)).toarray()
        W = np.abs(X) * u[None, :]
        diag = np.diag(W)
        assert np.all(diag >= W.sum(axis=1) - diag - 1e-12)

    def test_rejects_zero_entry(self):
        with pytest.raises(ValueError):
            build_xi(Treeplex([0], [[1, 2]]), np.array([1.0, 1.0, 0.0]), np.array([1.0]))


class TestKktResidual:
    def test_rps_uniform(self):
        g = rock_paper_scissors()
        u = np.array([1, 1 / 3, 1 / 3, 1 / 3])
        # mu absorbs the constant lam (1 + log(1/3)) of the stationarity rows
        mu = np.array([1 + np.log(1 / 3)])
        s = KktState(u, u.copy(), mu, -mu)
        assert np.abs(kkt_residual(g, g.lam, s)).max() <= 1e-10

    def test_constraint_block(self):
        g = rock_paper_scissors()
        u = np.array([1, 0.5, 0.5, 0.5])
        s = KktState(u, np.array([1, 1 / 3, 1 / 3, 1 / 3]), np.zeros(1), np.zeros(1))
        r = kkt_residual(g, g.lam, s)
        assert r[-2] == pytest.approx(0.5)

    def test_fixed_point_oracle_state(self, rng):
        A = rng.uniform(-1, 1, (4, 4))
        g = matrix_game(A, lam=1.0)
        x, y = qre_fixed_point(A, 1.0, 1.0)
        u = np.concatenate([[1], x])
        v = np.concatenate([[1], y])
        # multipliers from the first stationarity row
        mu = np.array([(A @ y)[0] + 1 + np.log(x[0])])
        nu = np.array([(A.T @ x)[0] - 1 - np.log(y[0])])
        r = kkt_residual(g, g.lam, KktState(u, v, mu, nu))
        assert np.abs(r).max() <= 1e-8

    def test_rejects_nonpositive(self):
        g = rock_paper_scissors()
        s = KktState(np.array([1, 1, 0, 0.]), np.array([1, 1 / 3, 1 / 3, 1 / 3]),
                     np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            kkt_residual(g, g.lam, s)


class TestNewton:
    def test_rps_uniform(self):
        s = newton_solve(rock_paper_scissors())
        np.testing.assert_allclose(s.u[1:], 1 / 3, atol=1e-8)
        np.testing.assert_allclose(s.v[1:], 1 / 3, atol=1e-8)

    def test_tiny_payoffs_give_uniform(self):
        eps = 1e-6
        s = newton_solve(matrix_game(eps * np.array([[1.0, -1.0], [-1.0, 1.0]]), lam=0.3))
        np.testing.assert_allclose(s.u[1:], 0.5, atol=10 * eps)

    def test_matches_fixed_point_oracle(self, rng):
        A = rng.uniform(-1, 1, (5, 5))
        s = newton_solve(matrix_game(A, lam=1.0), tol=1e-12)
        x, y = qre_fixed_point(A, 1.0, 1.0)
        np.testing.assert_allclose(s.u[1:], x, atol=1e-6)
        np.testing.assert_allclose(s.v[1:], y, atol=1e-6)

    def test_equal_lambda_softmax_consistency(self, rng):
        A = rng.uniform(-2, 2, (4, 3))
        s = newton_solve(matrix_game(A, lam=0.7), tol=1e-12)
        np.testing.assert_allclose(s.u[1:], softmax(-(A @ s.v[1:]) / 0.7), atol=1e-8)
        np.testing.assert_allclose(s.v[1:], softmax((A.T @ s.u[1:]) / 0.7), atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_residual(self, seed):
        g = random_game(seed, 4, 4, scale=5.0)
        s = newton_solve(g, tol=1e-10)
        res = [r for _, r in s.history]
        assert all(b <= a for a, b in zip(res, res[1:]))
        assert s.residual <= 1e-10

    def test_initialization_invariance(self, rng):
        g = random_game(11, 4, 4, scale=3.0)
        tol = 1e-10
        a = newton_solve(g, tol=tol)
        u0 = behavioral_to_sequence(g.tu, random_behavioral(g.tu, rng))
        v0 = behavioral_to_sequence(g.tv, random_behavioral(g.tv, rng))
        b = newton_solve(g, tol=tol, u0=u0, v0=v0)
        np.testing.assert_allclose(a.u, b.u, atol=10 * tol)
        np.testing.assert_allclose(a.v, b.v, atol=10 * tol)

    def test_asymmetric_rps_breaks_symmetry(self):
        g = rock_paper_scissors(win=(1.0, 2.0, 3.0))
        lam = RationalityParams(np.array([0.5]), np.array([2.0]))
        s = newton_solve(g, lam)
        assert np.abs(s.u - s.v).max() > 1e-3

    def test_gap_reported(self):
        s = newton_solve(random_game(1), tol=1e-10)
        assert 0 <= s.gap <= 1e-8

    def test_iteration_budget(self):
        with pytest.raises(ConvergenceError) as exc:
            newton_solve(random_game(1, scale=10.0), tol=1e-14, max_iters=1)
        assert exc.value.solution is not None
