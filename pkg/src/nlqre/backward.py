"""Implicit differentiation of the equilibrium.

The adjoint system is the optimality system of the quadratic saddle problem::

    min_x max_y  x^T P y + x^T Xi(u) x / 2 - y^T Xi(v) y / 2 + gu^T x + gv^T y
    s.t.         E x = 0,  F y = 0

whose stationarity conditions read ``Xi(u) x + P y + E^T a = -gu`` and
``P^T x - Xi(v) y + F^T b = -gv``. Its solution ``(x, y)`` is ``(y_u, y_v)``
in the gradient formulas ``dL/dP = y_u v^T + u y_v^T``.

All vectors are full length over sequences; root entries are fixed at zero
because the root of a realization plan is not a free variable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forward import auto_tau
from .game import Game, RationalityParams, payoff_apply
from .newton import XiMatrix, build_xi
from .treeplex import Treeplex

logger = logging.getLogger(__name__)


def xi_inverse_apply(t: Treeplex, u: np.ndarray, lam: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``Xi(u) x = b`` on the non-root block in linear time.

    Gaussian elimination leaves to root on the tree-structured matrix has
    pivots ``lam_{rho_a} / u_a``; the eliminated right-hand side is the
    subtree sum of ``u * b``. Back substitution then runs top-down:
    ``x_a = s_a / lam_{rho_a} + (u_a / u_p) x_p``.
    """
    ub = u * b
    ub[..., 0] = 0.0
    s, _ = t.subtree_sum(ub)
    return _back_substitute(t, u, lam, s)


def _back_substitute(t, u, lam, s):
    local = np.zeros(np.broadcast_shapes(s.shape, u.shape))
    ratio = np.zeros_like(local)
    lam_seq = t.seq_lambda(lam)
    local[..., 1:] = s[..., 1:] / lam_seq[..., 1:]
    ratio[..., 1:] = u[..., 1:] / u[..., t.seq_parent[1:]]
    return t.top_down(local, ratio, root=0.0)


def xi_apply(t: Treeplex, u: np.ndarray, lam: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``Xi(u) x`` on the non-root block (root entries of ``x`` are ignored)."""
    x = np.array(x, dtype=float, copy=True)
    x[..., 0] = 0.0
    lam_seq = t.seq_lambda(lam)
    J = t.child_lambda_sum(lam)
    out = (lam_seq + J) / np.where(u > 0, u, 1.0) * x
    par = t.seq_parent[1:]
    out[..., 1:] -= lam_seq[..., 1:] / u[..., par] * x[..., par]
    kids = t.infoset_to_parent(np.asarray(lam, dtype=float) * t.action_sum(x))
    out -= kids / u
    out[..., 0] = 0.0
    return out


def quadratic_best_response(t: Treeplex, c: np.ndarray, xi: XiMatrix,
                            return_multipliers: bool = False):
    """``argmin_{Ex=0} x^T c + x^T Xi x / 2`` in linear time.

    1. ``w = E Xi^{-1} c`` from one bottom-up pass: ``w_h`` is the sum of the
       subtree sums of ``u * c`` over the actions of ``h``, over ``lam_h``.
    2. ``E Xi^{-1} E^T`` is diagonal with entries ``u_{p_h} / lam_h``, so
       ``gamma_h = -w_h lam_h / u_{p_h}``.
    3. ``x = Xi^{-1} (-c - E^T gamma)``.
    """
    u, lam = xi.u, xi.lam
    c = np.asarray(c, dtype=float)
    uc = u * c
    uc[..., 0] = 0.0
    _, block = t.subtree_sum(uc)
    gamma = -block / u[..., t.parents]
    rhs = -c - t.constraint_transpose_apply(gamma)
    x = xi_inverse_apply(t, u, lam, rhs)
    if return_multipliers:
        return x, gamma
    return x


@dataclass
class BackwardProblem:
    u: np.ndarray
    v: np.ndarray
    lam: RationalityParams
    grad_u: np.ndarray
    grad_v: np.ndarray

    def __post_init__(self):
        if np.any(self.u <= 0) or np.any(self.v <= 0):
            raise ValueError("backward pass needs strictly positive plans")

    def xi_u(self, game: Game) -> XiMatrix:
        return build_xi(game.tu, self.u, self.lam.u)

    def xi_v(self, game: Game) -> XiMatrix:
        return build_xi(game.tv, self.v, self.lam.v)


def direct_backward_solve(bp: BackwardProblem, game: Game):
    """Sparse direct solve of the adjoint system; returns ``(y_u, y_v, y_mu, y_nu)``."""
    tu, tv = game.tu, game.tv
    Xu = bp.xi_u(game).reduced
    Xv = bp.xi_v(game).reduced
    P = game.P.csr[1:, 1:]
    E = tu.constraint_matrix()[1:, 1:]
    F = tv.constraint_matrix()[1:, 1:]
    K = sp.bmat([[Xu, P, E.T, None],
                 [P.T, -Xv, None, F.T],
                 [E, None, None, None],
                 [None, F, None, None]], format="csc")
    rhs = np.concatenate([-bp.grad_u[1:], -bp.grad_v[1:],
                          np.zeros(tu.n_infosets + tv.n_infosets)])
    if K.shape[0] == 0:
        sol = np.zeros(0)
    else:
        sol = spla.spsolve(K, rhs)
        sol = np.atleast_1d(sol)
    if not np.all(np.isfinite(sol)):
        raise RuntimeError("singular adjoint system")
    cuts = np.cumsum([tu.n_sequences - 1, tv.n_sequences - 1, tu.n_infosets])
    yu, yv, ymu, ynu = np.split(sol, cuts)
    return (np.concatenate([[0.0], yu]), np.concatenate([[0.0], yv]), ymu, ynu)


def adjoint_residual(game: Game, u, v, lam: RationalityParams, grad_u, grad_v, x, y):
    """Max-norm of the adjoint stationarity residual after eliminating multipliers.

    The multipliers are the ``Xi^{-1}``-weighted projections, computed by a
    quadratic best response to the raw residual.
    """
    tu, tv = game.tu, game.tv
    ru = xi_apply(tu, u, lam.u, x) + payoff_apply(game.P, y) + grad_u
    rv = payoff_apply(game.P, x, transpose=True) - xi_apply(tv, v, lam.v, y) + grad_v
    ru[..., 0] = 0.0
    rv[..., 0] = 0.0
    _, gu = quadratic_best_response(tu, ru, XiMatrix(tu, u, lam.u), True)
    _, gv = quadratic_best_response(tv, rv, XiMatrix(tv, v, lam.v), True)
    pu = ru + tu.constraint_transpose_apply(gu)
    pv = rv + tv.constraint_transpose_apply(gv)
    pu[..., 0] = 0.0
    pv[..., 0] = 0.0
    return np.maximum(np.abs(pu).max(axis=-1, initial=0.0),
                      np.abs(pv).max(axis=-1, initial=0.0))


# tau=None starts at this multiple of auto_tau and halves on blow-up
TAU_BOOST = 4.0
# a residual this many times the best seen so far counts as blow-up
BLOWUP = 10.0


def fom_backward_solve(bp: BackwardProblem, game: Game, tau: float | np.ndarray | None = None,
                       tol: float = 1e-9, max_iters: int = 200_000,
                       check_every: int = 20, init=None):
    """Primal-dual iteration on the quadratic saddle problem.

    Both prox oracles are quadratic best responses with cost
    ``tau/(1+tau) (linear term) - 1/(1+tau) Xi x_anchor``. With ``tau=None``
    each item starts at ``TAU_BOOST`` times :func:`~nlqre.forward.auto_tau`;
    an item whose residual blows up is reset to its best iterate and its step
    halved, never below ``auto_tau``. A given ``tau`` is used as is. One-player
    games need a single quadratic best response. Stops when
    :func:`adjoint_residual` is at most ``tol * max(1, |grad|_inf)``.
    Supports a leading batch axis on every input array; items stop
    independently. ``init=(x0, y0)`` warm-starts the iteration. Returns ``(y_u, y_v, info)``.
    """
    tu, tv = game.tu, game.tv
    batched = bp.u.ndim > 1
    U = np.atleast_2d(bp.u)
    V = np.atleast_2d(bp.v)
    B = len(U)
    LU = np.broadcast_to(np.atleast_2d(bp.lam.u), (B, tu.n_infosets))
    LV = np.broadcast_to(np.atleast_2d(bp.lam.v), (B, tv.n_infosets))
    GU = np.broadcast_to(np.atleast_2d(bp.grad_u), (B, tu.n_sequences)).copy()
    GV = np.broadcast_to(np.atleast_2d(bp.grad_v), (B, tv.n_sequences)).copy()
    GU[:, 0] = 0.0
    GV[:, 0] = 0.0
    if tau is None:
        floor = auto_tau(game, LU, LV)
        T = np.minimum(TAU_BOOST * floor, 1.0)
        floor = np.minimum(floor, T)
    else:
        T = np.broadcast_to(np.asarray(tau, dtype=float), (B,)).copy()
        if np.any(~(T > 0)):
            raise ValueError("tau must be positive")
        floor = T.copy()
    scale = np.maximum(1.0, np.maximum(np.abs(GU).max(axis=1, initial=0.0),
                                       np.abs(GV).max(axis=1, initial=0.0)))

    if init is None:
        X = np.zeros((B, tu.n_sequences))
        Y = np.zeros((B, tv.n_sequences))
    else:
        X = np.broadcast_to(np.atleast_2d(init[0]), (B, tu.n_sequences)).copy()
        Y = np.broadcast_to(np.atleast_2d(init[1]), (B, tv.n_sequences)).copy()
        X[:, 0] = 0.0
        Y[:, 0] = 0.0
    if game.is_one_player:
        # no coupling term: the adjoint is one quadratic best response
        X = quadratic_best_response(tu, GU, XiMatrix(tu, U, LU))
        res = adjoint_residual(game, U, V, RationalityParams(LU, LV), GU, GV, X, Y)
        info = {"residual": res, "iterations": np.zeros(B, dtype=int),
                "converged": res <= tol * scale}
        if batched:
            return X, Y, info
        return X[0], Y[0], {k: val[0] for k, val in info.items()}
    res = adjoint_residual(game, U, V, RationalityParams(LU, LV), GU, GV, X, Y)
    best_res, best_X, best_Y = res.copy(), X.copy(), Y.copy()
    iters = np.zeros(B, dtype=int)
    active = np.flatnonzero(res > tol * scale)
    it = 0
    while active.size and it < max_iters:
        u, v, lu, lv = U[active], V[active], LU[active], LV[active]
        gu, gv, x, y = GU[active], GV[active], X[active], Y[active]
        k1 = (T[active] / (1.0 + T[active]))[:, None]
        k2 = (1.0 / (1.0 + T[active]))[:, None]
        xi_u, xi_v = XiMatrix(tu, u, lu), XiMatrix(tv, v, lv)
        steps = min(check_every, max_iters - it)
        # blow-up is detected from the residual below
        with np.errstate(invalid="ignore", over="ignore"):
            for _ in range(steps):
                cx = k1 * (gu + payoff_apply(game.P, y)) - k2 * xi_apply(tu, u, lu, x)
                xn = quadratic_best_response(tu, cx, xi_u)
                xt = 2.0 * xn - x
                cy = (k1 * (-payoff_apply(game.P, xt, transpose=True) - gv)
                      - k2 * xi_apply(tv, v, lv, y))
                y = quadratic_best_response(tv, cy, xi_v)
                x = xn
            r = adjoint_residual(game, u, v, RationalityParams(lu, lv), gu, gv, x, y)
        it += steps
        X[active], Y[active] = x, y
        res[active] = r
        iters[active] = it
        blown = ~(r <= BLOWUP * best_res[active])
        retry = active[blown & (T[active] > floor[active])]
        if retry.size:
            T[retry] = np.maximum(T[retry] / 2.0, floor[retry])
            X[retry], Y[retry], res[retry] = best_X[retry], best_Y[retry], best_res[retry]
        better = active[r < best_res[active]]
        best_res[better], best_X[better], best_Y[better] = res[better], X[better], Y[better]
        bad = ~np.isfinite(res[active])
        if bad.any():
            logger.warning("FOM backward: %d items diverged; reduce tau", int(bad.sum()))
        active = active[(res[active] > tol * scale[active]) & ~bad]

    X, Y, res = best_X, best_Y, best_res
    converged = res <= tol * scale
    if not converged.all():
        logger.warning("FOM backward: %d of %d items above tolerance after %d iterations",
                       int((~converged).sum()), B, max_iters)
    info = {"residual": res, "iterations": iters, "converged": converged}
    if batched:
        return X, Y, info
    return X[0], Y[0], {k: val[0] for k, val in info.items()}
