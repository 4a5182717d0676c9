"""First-order primal-dual forward solver with dilated-entropy proxes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .game import EquilibriumSolution, Game, RationalityParams, payoff_apply
from .treeplex import (Treeplex, constraint_residual, dilated_entropy,
                       uniform_behavioral)

logger = logging.getLogger(__name__)


def smoothed_best_response(t: Treeplex, c: np.ndarray, lam: np.ndarray):
    """Minimize ``u^T c + dilated_entropy(u)`` over the treeplex.

    Returns ``(u, value)``. One bottom-up log-sum-exp pass gives the infoset
    values and per-infoset softmax behavior, one downward pass rebuilds the
    realization plan.
    """
    u, value, _ = _sbr(t, c, lam)
    return u, value


def _sbr(t: Treeplex, c, lam):
    r, _, b, logb = t.logit_traversal(-np.asarray(c, dtype=float), lam)
    u = t.top_down(np.zeros_like(b), b)
    return u, -r[..., 0], logb


def _entropy_grad_from_logb(logb, lam_seq, J):
    # lam_{rho_a} (1 + log b_a) - J_a ; root entry is irrelevant to the argmin
    return lam_seq * (1.0 + logb) - J


@dataclass(frozen=True)
class DilatedEntropyProx:
    """Prox oracle ``argmin <c, u> + E(u) + D(u, anchor) / tau`` on one treeplex."""

    t: Treeplex
    lam: np.ndarray
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        lam = np.asarray(self.lam, dtype=float)
        if np.any(~(lam > 0)):
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "lam", lam)

    def entropy_grad(self, anchor: np.ndarray) -> np.ndarray:
        """Gradient of the dilated entropy at an interior plan."""
        anchor = np.asarray(anchor, dtype=float)
        if np.any(anchor <= 0):
            raise ValueError("prox anchor must be strictly positive")
        if constraint_residual(self.t, anchor) > 1e-8:
            raise ValueError("prox anchor is not a realization plan")
        logb = np.zeros_like(anchor)
        logb[..., 1:] = np.log(anchor[..., 1:] / anchor[..., self.t.seq_parent[1:]])
        return _entropy_grad_from_logb(logb, self.t.seq_lambda(self.lam),
                                       self.t.child_lambda_sum(self.lam))


def prox_step(prox: DilatedEntropyProx, anchor: np.ndarray, linear: np.ndarray) -> np.ndarray:
    """Bregman proximal best response to the linear term ``linear``.

    Minimizes ``u^T linear + E(u) + (E(u) - u^T E'(anchor)) / tau``, i.e. a
    smoothed best response with cost
    ``tau/(1+tau) * linear - 1/(1+tau) * E'(anchor)``.
    """
    k1 = prox.tau / (1.0 + prox.tau)
    k2 = 1.0 / (1.0 + prox.tau)
    cost = k1 * np.asarray(linear, dtype=float) - k2 * prox.entropy_grad(anchor)
    u, _ = smoothed_best_response(prox.t, cost, prox.lam)
    return u


def objective(game: Game, lam: RationalityParams, u, v) -> np.ndarray:
    return (np.sum(u * payoff_apply(game.P, v), axis=-1)
            + dilated_entropy(game.tu, u, lam.u) - dilated_entropy(game.tv, v, lam.v))


def duality_gap(game: Game, lam: RationalityParams, u: np.ndarray, v: np.ndarray,
                feas_tol: float = 1e-6) -> np.ndarray:
    """``max_v' Obj(u, v') - min_u' Obj(u', v)``, both solved exactly."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    for t, x in ((game.tu, u), (game.tv, v)):
        if constraint_residual(t, x) > feas_tol:
            raise ValueError("duality gap needs feasible realization plans")
        if np.any(x < 0):
            raise ValueError("duality gap needs nonnegative realization plans")
    _, best_u = smoothed_best_response(game.tu, payoff_apply(game.P, v), lam.u)
    _, best_v = smoothed_best_response(game.tv, -payoff_apply(game.P, u, transpose=True),
                                       lam.v)
    gap = (dilated_entropy(game.tu, u, lam.u) + dilated_entropy(game.tv, v, lam.v)
           - best_u - best_v)
    # negative values are round-off only
    return np.maximum(gap, 0.0)


def auto_tau(game: Game, lam_u: np.ndarray, lam_v: np.ndarray) -> np.ndarray:
    """Per-item step size ``min(1, lam_min / max|P|)``.

    The entropy prox is ``lam``-strongly convex, so the primal-dual step must
    shrink with the smallest rationality parameter relative to the payoff
    scale or the iteration diverges. Infosets with a single action carry no
    entropy and are left out of the minimum.
    """
    pmax = float(np.abs(game.P.values).max(initial=0.0))

    def smallest(t, lam):
        lam = np.atleast_2d(lam)[:, t.n_actions > 1]
        return lam.min(axis=-1, initial=np.inf)

    lam_min = np.minimum(smallest(game.tu, lam_u), smallest(game.tv, lam_v))
    if pmax == 0.0:
        return np.ones_like(lam_min)
    return np.minimum(1.0, lam_min / pmax)


def _step_weights(tau, game, LU, LV):
    B = len(LU)
    if tau is None:
        tau = auto_tau(game, LU, LV)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (B,))
    if np.any(~(tau > 0)):
        raise ValueError("tau must be positive")
    return (tau / (1.0 + tau))[:, None], (1.0 / (1.0 + tau))[:, None]


def _one_player(game, LU, LV, batched):
    # the opponent plan is the constant root, so one smoothed best response is exact
    v = np.ones((len(LU), 1))
    u, _ = smoothed_best_response(game.tu, payoff_apply(game.P, v), LU)
    gaps = duality_gap(game, RationalityParams(LU, LV), u, v)
    if batched:
        return EquilibriumSolution(u, v, gap=gaps, iterations=np.zeros(len(u), dtype=int),
                                   converged=np.ones(len(u), dtype=bool), solver="fom")
    return EquilibriumSolution(u[0], v[0], gap=float(gaps[0]), iterations=0,
                               converged=True, solver="fom")


def _log_behavioral(t, x, B):
    x = np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), (B, t.n_sequences))
    if np.any(x <= 0):
        raise ValueError("warm start needs strictly positive plans")
    logb = np.zeros_like(x)
    logb[:, 1:] = np.log(x[:, 1:]) - np.log(x[:, t.seq_parent[1:]])
    # renormalize per infoset so the start is exactly feasible
    if t.n_infosets:
        logz = np.log(t.action_sum(np.exp(logb)))
        logb[:, 1:] -= logz[:, t.seq_infoset[1:]]
    return logb


def _as_batch(lam, n):
    lam = np.asarray(lam, dtype=float)
    lead = lam.shape[:-1]
    return lam.reshape(int(np.prod(lead)) if lead else 1, n)


def fom_forward_solve(game: Game, lam: RationalityParams | None = None,
                      tau: float | np.ndarray | None = None,
                      gap_tol: float = 1e-9, max_iters: int = 200_000,
                      check_every: int = 20, init=None) -> EquilibriumSolution:
    """Primal-dual iteration with dilated-entropy proxes.

    Each iteration takes a prox best response for ``u`` against the current
    ``v``, extrapolates ``2 u_new - u_old`` and takes a prox best response for
    ``v`` against the extrapolated point. The duality gap is evaluated every
    ``check_every`` iterations.

    ``init=(u0, v0)`` warm-starts from strictly positive plans (one per batch
    item). ``tau=None`` picks :func:`auto_tau` per batch item. One-player games are
    solved exactly by a single smoothed best response.

    ``lam`` may hold a leading batch axis; each batch item then stops
    independently as soon as its own gap drops below ``gap_tol``, so results
    do not depend on how items are grouped into batches.
    """
    lam = lam if lam is not None else game.lam
    if lam is None:
        raise ValueError("rationality parameters are required")
    tu, tv = game.tu, game.tv
    batched = lam.u.ndim > 1 or lam.v.ndim > 1
    LU = _as_batch(lam.u, tu.n_infosets)
    LV = _as_batch(lam.v, tv.n_infosets)
    B = max(len(LU), len(LV))
    LU = np.broadcast_to(LU, (B, tu.n_infosets))
    LV = np.broadcast_to(LV, (B, tv.n_infosets))
    lam_b = RationalityParams(LU, LV)

    if game.is_one_player:
        return _one_player(game, LU, LV, batched)

    seq_lu, J_u = tu.seq_lambda(LU), tu.child_lambda_sum(LU)
    seq_lv, J_v = tv.seq_lambda(LV), tv.child_lambda_sum(LV)
    K1, K2 = _step_weights(tau, game, LU, LV)

    if init is None:
        logbu = np.tile(np.log(uniform_behavioral(tu)), (B, 1))
        logbv = np.tile(np.log(uniform_behavioral(tv)), (B, 1))
    else:
        logbu = _log_behavioral(tu, init[0], B)
        logbv = _log_behavioral(tv, init[1], B)
    u = tu.top_down(np.zeros_like(logbu), np.exp(logbu))
    v = tv.top_down(np.zeros_like(logbv), np.exp(logbv))

    gaps = duality_gap(game, lam_b, u, v)
    best = (u.copy(), v.copy(), gaps.copy())
    iters = np.zeros(B, dtype=int)
    history = [(0, float(gaps.max()))]
    active = np.flatnonzero(gaps > gap_tol)
    it = 0
    while active.size and it < max_iters:
        ua, va = u[active], v[active]
        lbu, lbv = logbu[active], logbv[active]
        su, jv_u, lu = seq_lu[active], J_u[active], LU[active]
        sv, jv_v, lv = seq_lv[active], J_v[active], LV[active]
        k1, k2 = K1[active], K2[active]
        steps = min(check_every, max_iters - it)
        for _ in range(steps):
            cu = k1 * payoff_apply(game.P, va) - k2 * _entropy_grad_from_logb(lbu, su, jv_u)
            un, _, lbu = _sbr(tu, cu, lu)
            ut = 2.0 * un - ua
            cv = (-k1 * payoff_apply(game.P, ut, transpose=True)
                  - k2 * _entropy_grad_from_logb(lbv, sv, jv_v))
            va, _, lbv = _sbr(tv, cv, lv)
            ua = un
        it += steps
        g = duality_gap(game, RationalityParams(lu, lv), ua, va)
        u[active], v[active] = ua, va
        logbu[active], logbv[active] = lbu, lbv
        gaps[active] = g
        iters[active] = it
        improved = g < best[2][active]
        idx = active[improved]
        best[0][idx], best[1][idx], best[2][idx] = ua[improved], va[improved], g[improved]
        history.append((it, float(np.nanmax(g))))
        bad = ~np.isfinite(g)
        if bad.any():
            logger.warning("FOM forward: %d items diverged; reduce tau", int(bad.sum()))
        active = active[(g > gap_tol) & ~bad]

    converged = best[2] <= gap_tol
    if not converged.all():
        logger.warning("FOM forward: %d of %d items did not reach gap %.1e in %d "
                       "iterations", int((~converged).sum()), B, gap_tol, max_iters)
    u, v, gaps = best
    if batched:
        return EquilibriumSolution(u, v, gap=gaps, iterations=iters,
                                   converged=converged, solver="fom", history=history)
    return EquilibriumSolution(u[0], v[0], gap=float(gaps[0]), iterations=int(iters[0]),
                               converged=bool(converged[0]), solver="fom",
                               history=history)
