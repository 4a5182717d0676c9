import json

import numpy as np
import pytest

from nlqre.game import (Game, RationalityParams, SparsePayoff, load_game, payoff_apply,
                        save_game, swap_roles)
from nlqre.treeplex import Treeplex
from nlqre.zoo import matrix_game, random_game


class TestSparsePayoff:
    def test_empty_is_zero(self):
        P = SparsePayoff([], [], [], (3, 4))
        np.testing.assert_array_equal(payoff_apply(P, np.ones(4)), np.zeros(3))

    def test_scalar(self):
        P = SparsePayoff([0], [0], [5.0], (1, 1))
        np.testing.assert_array_equal(payoff_apply(P, np.array([1.0])), [5.0])

    def test_dense_oracle(self, rng):
        D = rng.normal(size=(10, 10)) * (rng.random((10, 10)) < 0.3)
        P = SparsePayoff.from_dense(D)
        x = rng.normal(size=10)
        np.testing.assert_allclose(payoff_apply(P, x), D @ x, atol=1e-12)
        np.testing.assert_allclose(payoff_apply(P, x, transpose=True), D.T @ x, atol=1e-12)
        X = rng.normal(size=(4, 10))
        np.testing.assert_allclose(payoff_apply(P, X), X @ D.T, atol=1e-12)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparsePayoff([0, 0], [1, 1], [1.0, 2.0], (2, 2))

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            SparsePayoff([2], [0], [1.0], (2, 2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            payoff_apply(SparsePayoff([], [], [], (2, 3)), np.ones(2))


class TestGame:
    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            RationalityParams(np.array([1.0, 0.0]), np.array([1.0]))

    def test_shape_mismatch(self):
        t = Treeplex([0], [[1, 2]])
        with pytest.raises(ValueError):
            Game(t, t, SparsePayoff([], [], [], (3, 4)))

    def test_json_round_trip(self, tmp_path):
        g = random_game(4)
        save_game(g, tmp_path / "g.json")
        h = load_game(tmp_path / "g.json")
        assert h.tu == g.tu and h.tv == g.tv
        np.testing.assert_array_equal(h.P.toarray(), g.P.toarray())
        np.testing.assert_array_equal(h.lam.u, g.lam.u)

    def test_json_field_names(self, tmp_path):
        save_game(matrix_game([[1.0, -1.0], [-1.0, 1.0]], lam=1.0), tmp_path / "g.json")
        d = json.loads((tmp_path / "g.json").read_text())
        assert {"treeplex_u", "treeplex_v", "payoffs", "lambda"} <= set(d)
        assert set(d["lambda"]) == {"u", "v"}
        assert all(len(t) == 3 for t in d["payoffs"])

    def test_swap_roles_negates_transpose(self):
        g = random_game(5)
        s = swap_roles(g)
        np.testing.assert_array_equal(s.P.toarray(), -g.P.toarray().T)
        assert s.tu == g.tv
