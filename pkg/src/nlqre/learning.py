"""Learning rationality parameters from observed play.

A :class:`LambdaModel` maps a feature vector to one lambda per weight group,
``lambda_g = w_g . f + eps``, and every infoset reads the lambda of its group.
Training chains a batched forward solve, the log loss of each trajectory, a
batched adjoint solve and the chain rule back to the weights.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backward import BackwardProblem, direct_backward_solve, fom_backward_solve
from .forward import fom_forward_solve
from .game import Game, RationalityParams
from .gradients import ObservedPlay, Record, ZeroProbabilityError, grad_lambda, log_loss
from .newton import newton_solve

logger = logging.getLogger(__name__)

EVAL_GAP_TOL = 1e-9


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite or exploded."""


def group_maps(game: Game) -> tuple[np.ndarray, np.ndarray, int]:
    """Infoset-to-group maps for both players and the number of groups.

    Without explicit tying every infoset is its own group: min-player
    infosets first, then max-player infosets.
    """
    nu, nv = game.tu.n_infosets, game.tv.n_infosets
    gu, gv = game.lambda_groups_u, game.lambda_groups_v
    if gu is None and gv is None:
        return np.arange(nu), nu + np.arange(nv), nu + nv
    gu = np.arange(nu) if gu is None else gu
    gv = np.arange(nv) if gv is None else gv
    n = max(int(gu.max(initial=-1)), int(gv.max(initial=-1))) + 1
    return gu, gv, n


@dataclass
class LambdaModel:
    weights: np.ndarray   # (n_groups, n_features)
    eps: float = 0.001

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def n_groups(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def group_lambdas(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        if f.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {f.shape[-1]}")
        return f @ self.weights.T + self.eps

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "LambdaModel":
        return cls(np.asarray(d["weights"], dtype=float), float(d["eps"]))


def lambda_forward(model: LambdaModel, game: Game, features) -> RationalityParams:
    """Per-infoset lambdas; a 2-D ``features`` array gives a batch."""
    gu, gv, n = group_maps(game)
    if n != model.n_groups:
        raise ValueError(f"model has {model.n_groups} groups, game has {n}")
    lam_g = model.group_lambdas(features)
    if np.any(lam_g <= 0):
        raise ValueError("model produces non-positive lambda for these features")
    return RationalityParams(lam_g[..., gu], lam_g[..., gv])


def weight_gradient(game: Game, features, dlam_u, dlam_v) -> np.ndarray:
    """Chain rule ``dL/dw_g = sum_{h in g} dL/dlambda_h * f`` summed over a batch."""
    gu, gv, n = group_maps(game)
    f = np.atleast_2d(np.asarray(features, dtype=float))
    dlu = np.atleast_2d(dlam_u)
    dlv = np.atleast_2d(dlam_v)
    dg = np.zeros((len(f), n))
    for b in range(len(f)):
        dg[b] = (np.bincount(gu, weights=dlu[b], minlength=n)
                 + np.bincount(gv, weights=dlv[b], minlength=n))
    return dg.T @ f


# ----------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params) -> "AdamState":
        p = np.array(params, dtype=float, copy=True)
        return cls(p, np.zeros_like(p), np.zeros_like(p))


def adam_step(state: AdamState, grad, lr: float) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    p = state.params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return AdamState(p, m, v, t, state.beta1, state.beta2, state.eps)


def sgd_step(params, grad, lr: float) -> np.ndarray:
    return np.asarray(params, dtype=float) - lr * np.asarray(grad, dtype=float)


def guard_weights(old: np.ndarray, new: np.ndarray, features: np.ndarray,
                  eps: float) -> np.ndarray:
    """Pull each group's update back so ``lambda >= eps / 2`` on ``features``.

    ``old`` must satisfy the bound. Group ``g`` moves to
    ``old_g + alpha (new_g - old_g)`` with the largest ``alpha`` in ``[0, 1]``
    that keeps every observed feature vector inside the bound.
    """
    floor = -eps / 2.0          # need w . f >= floor
    out = new.copy()
    for g in range(len(new)):
        a = features @ old[g]
        d = features @ (new[g] - old[g])
        bad = a + d < floor
        if not bad.any():
            continue
        alpha = float(np.min((floor - a[bad]) / d[bad]))
        alpha = min(max(alpha, 0.0), 1.0)
        out[g] = old[g] + alpha * (new[g] - old[g])
        logger.info("lambda guard: group %d update scaled by %.3g", g, alpha)
    return out


# ----------------------------------------------------------------------
# configuration


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    epochs: int = 50
    optimizer: str = "adam"
    solver: str = "fom"
    gap_tol: float = 1e-6
    residual_tol: float = 1e-4
    eval_gap_tol: float = EVAL_GAP_TOL
    tau: float | None = None
    seed: int = 0
    threads: int = 1
    explode_factor: float = 1e3
    warm_start: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or not self.lr > 0:
            raise ValueError("batch size and learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.solver not in ("fom", "newton"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.threads < 1:
            raise ValueError("threads must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# ----------------------------------------------------------------------
# batched loss and gradient


def _solve_forward(game, lam: RationalityParams, solver, gap_tol, tau, init=None):
    if solver == "fom":
        sol = fom_forward_solve(game, lam, tau=tau, gap_tol=gap_tol, init=init)
        return sol.u, sol.v, np.asarray(sol.converged)
    us, vs = [], []
    for b in range(len(lam.u)):
        s = newton_solve(game, RationalityParams(lam.u[b], lam.v[b]), tol=gap_tol)
        us.append(s.u)
        vs.append(s.v)
    return np.array(us), np.array(vs), np.ones(len(us), dtype=bool)


def _features(plays, n_features) -> np.ndarray:
    f = np.array([p.features for p in plays], dtype=float).reshape(len(plays), -1)
    if f.shape[1] != n_features:
        raise ValueError(f"plays carry {f.shape[1]} features, model expects {n_features}")
    return f


def _warm(cache, keys, slot):
    """Stack cached pairs at ``slot``; ``None`` unless every key has one."""
    if cache is None or not all(k in cache and cache[k][slot] is not None for k in keys):
        return None
    return (np.array([cache[k][slot] for k in keys]),
            np.array([cache[k][slot + 1] for k in keys]))


def batch_loss_grad(game: Game, model: LambdaModel, plays, cfg: TrainConfig,
                    need_grad: bool = True, gap_tol: float | None = None,
                    cache: dict | None = None):
    """Summed log loss over ``plays`` and its gradient in the model weights.

    Returns ``(loss_sum, grad_sum, n_used)``; items whose solve failed or whose
    observed actions have zero probability are skipped and logged. ``cache``
    maps a feature row to its last equilibrium and adjoint, which warm-start
    the solvers when every item of the batch has an entry.
    """
    gap_tol = cfg.gap_tol if gap_tol is None else gap_tol
    F = _features(plays, model.n_features)
    uniq, inverse = np.unique(F, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    keys = [row.tobytes() for row in uniq]
    lam = lambda_forward(model, game, uniq)
    init = _warm(cache, keys, 0) if cfg.solver == "fom" else None
    U, V, ok = _solve_forward(game, lam, cfg.solver, gap_tol, cfg.tau, init)
    if cache is not None:
        for j, k in enumerate(keys):
            if ok[j]:
                old = cache.get(k, (None,) * 4)
                cache[k] = (U[j], V[j], old[2], old[3])
    GU = np.zeros_like(U)
    GV = np.zeros_like(V)
    loss, used = 0.0, 0
    for i, play in enumerate(plays):
        k = inverse[i]
        if not ok[k]:
            logger.warning("skipping item %d: forward solve did not converge", i)
            continue
        try:
            li, gu, gv = log_loss(game, U[k], V[k], play)
        except ZeroProbabilityError as exc:
            logger.warning("skipping item %d: %s", i, exc)
            continue
        loss += li
        GU[k] += gu
        GV[k] += gv
        used += 1
    if not need_grad:
        return loss, None, used
    active = ok & (np.any(GU != 0, axis=1) | np.any(GV != 0, axis=1))
    grad = np.zeros_like(model.weights)
    if active.any():
        idx = np.flatnonzero(active)
        lam_a = RationalityParams(lam.u[idx], lam.v[idx])
        if cfg.solver == "fom":
            bp = BackwardProblem(U[idx], V[idx], lam_a, GU[idx], GV[idx])
            sub = [keys[j] for j in idx]
            binit = _warm(cache, sub, 2)
            yu, yv, _ = fom_backward_solve(bp, game, tau=cfg.tau, tol=cfg.residual_tol,
                                           init=binit)
            if cache is not None:
                for j, k in enumerate(sub):
                    cache[k] = (cache[k][0], cache[k][1], yu[j], yv[j])
        else:
            ys = [direct_backward_solve(BackwardProblem(
                U[j], V[j], RationalityParams(lam.u[j], lam.v[j]), GU[j], GV[j]), game)
                for j in idx]
            yu = np.array([y[0] for y in ys])
            yv = np.array([y[1] for y in ys])
        dlu, dlv = grad_lambda(game, U[idx], V[idx], yu, yv)
        grad = weight_gradient(game, uniq[idx], dlu, dlv)
    return loss, grad, used


def _parallel_loss_grad(game, model, plays, cfg, need_grad=True, gap_tol=None, cache=None):
    if cfg.threads == 1 or len(plays) < 2:
        return batch_loss_grad(game, model, plays, cfg, need_grad, gap_tol, cache)
    chunks = np.array_split(np.arange(len(plays)), min(cfg.threads, len(plays)))
    with ThreadPoolExecutor(cfg.threads) as ex:
        parts = list(ex.map(lambda c: batch_loss_grad(
            game, model, [plays[i] for i in c], cfg, need_grad, gap_tol, cache), chunks))
    loss = sum(p[0] for p in parts)
    used = sum(p[2] for p in parts)
    grad = sum(p[1] for p in parts) if need_grad else None
    return loss, grad, used


def evaluate(game: Game, model: LambdaModel, plays, cfg: TrainConfig | None = None,
             batch_size: int = 256, cache: dict | None = None) -> float:
    """Mean log loss per trajectory with solves at ``cfg.eval_gap_tol``."""
    cfg = cfg or TrainConfig()
    total, used = 0.0, 0
    for s in range(0, len(plays), batch_size):
        chunk = plays[s:s + batch_size]
        loss, _, n = _parallel_loss_grad(game, model, chunk, cfg, need_grad=False,
                                         gap_tol=cfg.eval_gap_tol, cache=cache)
        total += loss
        used += n
    return total / used if used else math.nan


# ----------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: LambdaModel
    history: list = field(default_factory=list)   # (epoch, train, test, seconds)

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,test_loss,wall_seconds"]
        for e, tr, te, sec in self.history:
            lines.append(f"{e},{tr!r},{te!r},{sec!r}")
        return "\n".join(lines) + "\n"


def train(game: Game, train_set, cfg: TrainConfig, model: LambdaModel,
          test_set=None) -> TrainResult:
    """Minibatch training of ``model`` on ``train_set``.

    Epoch 0 of the history evaluates the initial model on both sets. Later
    rows hold the mean minibatch training loss of the epoch and the test loss
    of the model at the end of the epoch. ``train_set`` must be nonempty.
    """
    if not train_set:
        raise ValueError("training set is empty")
    for p in train_set:
        p.validate(game)
    model = LambdaModel(model.weights.copy(), model.eps)
    F_all = _features(train_set, model.n_features)
    if np.any(model.group_lambdas(F_all) < model.eps / 2):
        raise ValueError("initial model violates the lambda floor on the training set")
    rng = np.random.default_rng(cfg.seed)
    start = time.perf_counter()

    train_cache = {} if cfg.warm_start else None
    test_cache = {} if cfg.warm_start else None

    def test_loss():
        return evaluate(game, model, test_set, cfg, cache=test_cache) if test_set else math.nan

    train0 = evaluate(game, model, train_set, cfg, cache=train_cache)
    history = [(0, train0, test_loss(), time.perf_counter() - start)]
    logger.info("epoch 0 train %.6f test %.6f", history[0][1], history[0][2])
    adam = AdamState.init(model.weights)
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[s:s + cfg.batch_size]]
            loss, grad, used = _parallel_loss_grad(game, model, batch, cfg, cache=train_cache)
            if used == 0:
                continue
            if not math.isfinite(loss) or loss / used > cfg.explode_factor * max(train0, 1.0):
                raise TrainingDivergedError(
                    f"epoch {epoch}: batch loss {loss / used:.4g} exploded "
                    f"(initial {train0:.4g})")
            grad = grad / used
            old = model.weights
            if cfg.optimizer == "adam":
                adam = adam_step(adam, grad, cfg.lr)
                new = adam.params
            else:
                new = sgd_step(old, grad, cfg.lr)
            new = guard_weights(old, new, F_all, model.eps)
            adam.params = new
            model = LambdaModel(new, model.eps)
            total += loss
            count += used
        row = (epoch, total / count if count else math.nan, test_loss(),
               time.perf_counter() - start)
        history.append(row)
        logger.info("epoch %d train %.6f test %.6f (%.1fs)", *row)
    return TrainResult(model, history)


# ----------------------------------------------------------------------
# synthetic data


def sample_trajectory(game: Game, u: np.ndarray, v: np.ndarray, rng) -> tuple[Record, ...]:
    """Draw one terminal outcome and return both players' decisions on its path.

    Terminal pairs ``(i, j)`` are drawn with probability
    ``u_i v_j chance_ij``; without a chance matrix the payoff pattern is used
    with unit chance weight.
    """
    pat = game.chance if game.chance is not None else game.P
    w = np.clip(u[pat.rows] * v[pat.cols], 0.0, None)
    if game.chance is not None:
        w = w * pat.values
    total = w.sum()
    if not abs(total - 1.0) < 1e-6:
        raise ValueError(f"terminal outcome probabilities sum to {total:.6g}, not 1")
    k = rng.choice(len(w), p=w / total)
    recs = [Record("u", h, a) for h, a in game.tu.path(int(pat.rows[k]))]
    recs += [Record("v", h, a) for h, a in game.tv.path(int(pat.cols[k]))]
    return tuple(recs)


def sample_dataset(game: Game, model: LambdaModel, n: int, seed: int = 0,
                   features=None, gap_tol: float = EVAL_GAP_TOL,
                   solver: str = "fom", batch_size: int = 256) -> list[ObservedPlay]:
    """Synthetic plays from the equilibria induced by ``model``.

    Features are ``U[0, 1]`` per coordinate unless given as an ``(n, D)``
    array. Each play solves the equilibrium of its own lambdas and samples one
    joint trajectory.
    """
    rng = np.random.default_rng(seed)
    if features is None:
        features = rng.uniform(0.0, 1.0, size=(n, model.n_features))
    F = np.asarray(features, dtype=float).reshape(n, model.n_features)
    plays = []
    for s in range(0, n, batch_size):
        uniq, inv = np.unique(F[s:s + batch_size], axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        lam = lambda_forward(model, game, uniq)
        U, V, ok = _solve_forward(game, lam, solver, gap_tol, None)
        if not ok.all():
            raise RuntimeError("equilibrium solve failed while sampling")
        for i, k in enumerate(inv):
            recs = sample_trajectory(game, U[k], V[k], rng)
            plays.append(ObservedPlay(recs, tuple(F[s + i])))
    return plays
