"""Second-order baseline: Newton's method on the NLQRE optimality conditions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .game import EquilibriumSolution, Game, RationalityParams, payoff_apply
from .treeplex import Treeplex, behavioral_to_sequence, uniform_plan

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Raised when a solver exhausts its iteration budget.

    ``solution`` holds the last iterate.
    """

    def __init__(self, msg: str, solution: EquilibriumSolution | None = None):
        super().__init__(msg)
        self.solution = solution


@dataclass
class KktState:
    u: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True, eq=False)
class XiMatrix:
    """Hessian of the dilated entropy at an interior plan ``u``.

    Diagonal ``(lam_{rho_a} + J_a) / u_a``, off-diagonal ``-lam_{rho_a} / u_p``
    between a sequence and its parent. The full matrix has ``u`` in its null
    space; the block over non-root sequences (``reduced``) is positive
    definite.
    """

    t: Treeplex
    u: np.ndarray
    lam: np.ndarray

    @property
    def matrix(self) -> sp.csr_matrix:
        t, u, lam = self.t, self.u, self.lam
        n = t.n_sequences
        lam_seq = t.seq_lambda(lam)
        diag = (lam_seq + t.child_lambda_sum(lam)) / u
        child = np.arange(1, n)
        par = t.seq_parent[1:]
        off = -lam_seq[1:] / u[par]
        rows = np.concatenate([np.arange(n), child, par])
        cols = np.concatenate([np.arange(n), par, child])
        vals = np.concatenate([diag, off, off])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @property
    def reduced(self) -> sp.csr_matrix:
        return self.matrix[1:, 1:]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_xi(t: Treeplex, u: np.ndarray, lam: np.ndarray) -> XiMatrix:
    u = np.asarray(u, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if u.shape != (t.n_sequences,):
        raise ValueError(f"expected a plan of length {t.n_sequences}")
    if np.any(u <= 0):
        raise ValueError("Xi(u) needs a strictly positive plan")
    return XiMatrix(t, u, lam)


def _stationarity(t: Treeplex, x, lam, mult, linear, sign):
    # sign=+1: min player, sign=-1: max player
    lam_seq = t.seq_lambda(lam)
    log_ratio = np.log(x[1:] / x[t.seq_parent[1:]])
    J = t.child_lambda_sum(lam)
    ent = lam_seq[1:] * (1.0 + log_ratio) - J[1:]
    return linear[1:] + sign * ent - t.constraint_transpose_apply(mult)[1:]


def kkt_residual(game: Game, lam: RationalityParams, s: KktState) -> np.ndarray:
    """Stacked optimality residual.

    Blocks, in order, over non-root sequences and infosets::

        (Pv)_a   + lam(1 + log(u_a/u_p)) - J_a + sum_{c in C_a} mu_c - mu_h
        (P^Tu)_a - lam(1 + log(v_a/v_p)) + J_a + sum_{c in C_a} nu_c - nu_h
        E u - e
        F v - f
    """
    tu, tv = game.tu, game.tv
    if np.any(s.u <= 0) or np.any(s.v <= 0):
        raise ValueError("KKT residual needs strictly positive plans")
    gu = _stationarity(tu, s.u, lam.u, s.mu, payoff_apply(game.P, s.v), +1.0)
    gv = _stationarity(tv, s.v, lam.v, s.nu, payoff_apply(game.P, s.u, transpose=True), -1.0)
    cu = tu.constraint_apply(s.u)
    cv = tv.constraint_apply(s.v)
    return np.concatenate([gu, gv, cu, cv])


def _kkt_matrix(game: Game, lam: RationalityParams, u, v) -> sp.csc_matrix:
    Xu = build_xi(game.tu, u, lam.u).reduced
    Xv = build_xi(game.tv, v, lam.v).reduced
    P = game.P.csr[1:, 1:]
    E = game.tu.constraint_matrix()[1:, 1:]
    F = game.tv.constraint_matrix()[1:, 1:]
    return sp.bmat([[Xu, P, -E.T, None],
                    [P.T, -Xv, None, -F.T],
                    [E, None, None, None],
                    [None, F, None, None]], format="csc")


def newton_solve(game: Game, lam: RationalityParams | None = None, tol: float = 1e-8,
                 max_iters: int = 1000, u0: np.ndarray | None = None,
                 v0: np.ndarray | None = None, min_ratio: float = 0.01) -> EquilibriumSolution:
    """Damped Newton iteration to ``||kkt_residual||_inf <= tol``.

    Starts from uniform behavioral strategies (or feasible ``u0``/``v0``) with
    zero multipliers. Each Newton step is halved until every plan entry keeps
    at least ``min_ratio`` of its current value and the residual max-norm does
    not increase. Feasible starts stay feasible, so the residual's ``J_a``
    form and the Hessian ``Xi`` agree along every step.
    """
    lam = lam if lam is not None else game.lam
    if lam is None:
        raise ValueError("rationality parameters are required")
    tu, tv = game.tu, game.tv
    nu_, nv_ = tu.n_sequences - 1, tv.n_sequences - 1
    mu_, mv_ = tu.n_infosets, tv.n_infosets
    u = uniform_plan(tu) if u0 is None else np.array(u0, dtype=float)
    v = uniform_plan(tv) if v0 is None else np.array(v0, dtype=float)
    mu = np.zeros(mu_)
    nu = np.zeros(mv_)
    cuts = np.cumsum([nu_, nv_, mu_])

    def residual(u, v, mu, nu):
        return kkt_residual(game, lam, KktState(u, v, mu, nu))

    g = residual(u, v, mu, nu)
    res = float(np.abs(g).max(initial=0.0))
    history = [(0, res)]
    it = 0
    while res > tol:
        if it >= max_iters:
            sol = EquilibriumSolution(u, v, mu, nu, residual=res, iterations=it,
                                      converged=False, solver="newton", history=history)
            raise ConvergenceError(f"Newton did not reach residual {tol:.1e} in "
                                   f"{max_iters} iterations (residual {res:.3e})", sol)
        K = _kkt_matrix(game, lam, u, v)
        step = spla.spsolve(K, -g)
        if not np.all(np.isfinite(step)):
            raise RuntimeError("singular Newton system")
        du, dv, dmu, dnu = np.split(step, cuts)
        t = 1.0
        while (np.any(u[1:] + t * du < min_ratio * u[1:])
               or np.any(v[1:] + t * dv < min_ratio * v[1:])):
            t *= 0.5
        while True:
            un = u.copy()
            vn = v.copy()
            un[1:] += t * du
            vn[1:] += t * dv
            gn = residual(un, vn, mu + t * dmu, nu + t * dnu)
            rn = float(np.abs(gn).max(initial=0.0))
            if rn <= res or t < 1e-12:
                break
            t *= 0.5
        if rn > res:
            logger.warning("Newton line search failed to reduce the residual (%.3e)", res)
        u, v, mu, nu, g, res = un, vn, mu + t * dmu, nu + t * dnu, gn, min(rn, res)
        it += 1
        history.append((it, rn))
        logger.debug("newton it=%d step=%.3g residual=%.3e", it, t, rn)

    from .forward import duality_gap
    gap = float(duality_gap(game, lam, _renormalize(tu, u), _renormalize(tv, v)))
    return EquilibriumSolution(u, v, mu, nu, gap=gap, residual=res, iterations=it,
                               converged=True, solver="newton", history=history)


def _renormalize(t: Treeplex, x: np.ndarray) -> np.ndarray:
    """Nearest-by-construction feasible plan sharing ``x``'s behavior."""
    b = np.ones_like(x)
    b[1:] = np.maximum(x[1:], 0.0)
    if t.n_infosets:
        tot = t.action_sum(b)
        b[1:] /= tot[t.seq_infoset[1:]]
    return behavioral_to_sequence(t, b)
