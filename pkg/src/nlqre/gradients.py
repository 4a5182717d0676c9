"""Observed-action log loss and parameter gradients from adjoint solutions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .game import Game, SparsePayoff
from .treeplex import Treeplex

PLAYERS = ("u", "v")


class ZeroProbabilityError(ValueError):
    """An observed action has zero probability under the model."""


@dataclass(frozen=True)
class Record:
    player: str   # "u" (min player) or "v" (max player)
    infoset: int
    action: int   # index within the infoset's action list

    def to_dict(self) -> dict:
        return {"player": self.player, "infoset": self.infoset, "action": self.action}


@dataclass(frozen=True)
class ObservedPlay:
    records: tuple[Record, ...]
    features: tuple[float, ...] = ()

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.player not in PLAYERS:
                raise ValueError(f"unknown player {r.player!r}")
            if (r.player, r.infoset) in seen:
                raise ValueError(f"infoset {r.infoset} of player {r.player} "
                                 f"observed twice in one trajectory")
            seen.add((r.player, r.infoset))

    def validate(self, game: Game) -> None:
        for r in self.records:
            t = game.tu if r.player == "u" else game.tv
            if not 0 <= r.infoset < t.n_infosets:
                raise ValueError(f"infoset {r.infoset} out of range for player {r.player}")
            if not 0 <= r.action < t.n_actions[r.infoset]:
                raise ValueError(f"illegal action {r.action} at infoset {r.infoset}")

    def to_dict(self) -> dict:
        return {"features": list(self.features),
                "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservedPlay":
        recs = tuple(Record(str(r["player"]), int(r["infoset"]), int(r["action"]))
                     for r in d["records"])
        return cls(recs, tuple(float(f) for f in d.get("features", ())))


def write_jsonl(plays: Iterable[ObservedPlay], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in plays:
            fh.write(json.dumps(p.to_dict()) + "\n")


def read_jsonl(path: str | Path) -> list[ObservedPlay]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ObservedPlay.from_dict(json.loads(line)))
    return out


def _seq(t: Treeplex, rec: Record) -> tuple[int, int]:
    a = int(t.action_start[rec.infoset]) + rec.action
    return a, int(t.parents[rec.infoset])


def log_loss(game: Game, u: np.ndarray, v: np.ndarray, obs: ObservedPlay):
    """Negative log-likelihood of a trajectory's actions and its plan gradients.

    ``loss = -sum log(x_a / x_parent)`` over the records. The gradients have
    ``-1/x_a`` at every observed sequence and ``+1/x_parent`` at its parent,
    accumulated. Raises :class:`ZeroProbabilityError` if a recorded action has
    zero probability.
    """
    gu = np.zeros(game.tu.n_sequences)
    gv = np.zeros(game.tv.n_sequences)
    loss = 0.0
    for rec in obs.records:
        t, x, g = (game.tu, u, gu) if rec.player == "u" else (game.tv, v, gv)
        a, p = _seq(t, rec)
        if not (x[a] > 0 and x[p] > 0):
            raise ZeroProbabilityError(
                f"player {rec.player} infoset {rec.infoset} action {rec.action} "
                f"has zero probability; loss is infinite")
        loss -= math.log(x[a] / x[p])
        g[a] -= 1.0 / x[a]
        g[p] += 1.0 / x[p]
    return loss, gu, gv


def grad_payoff(y_u, y_v, u, v, rows, cols) -> np.ndarray:
    """``(y_u v^T + u y_v^T)`` evaluated only at the given coordinates."""
    y_u, y_v, u, v = map(np.asarray, (y_u, y_v, u, v))
    if y_u.shape != u.shape or y_v.shape != v.shape:
        raise ValueError("dimension mismatch between adjoints and plans")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    return y_u[rows] * v[cols] + u[rows] * y_v[cols]


def grad_payoff_sparse(y_u, y_v, u, v, pattern: SparsePayoff) -> SparsePayoff:
    vals = grad_payoff(y_u, y_v, u, v, pattern.rows, pattern.cols)
    return SparsePayoff(pattern.rows, pattern.cols, vals, pattern.shape)


def kappa_dot(t: Treeplex, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``kappa_h^T y`` for every infoset ``h``.

    ``(kappa_h)_a = 1 + log(x_a / x_parent)`` for ``a`` in ``A_h`` and ``-1``
    at the parent sequence of ``h``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = np.zeros(np.broadcast_shapes(x.shape, y.shape))
    k[..., 1:] = 1.0 + np.log(x[..., 1:] / x[..., t.seq_parent[1:]])
    return t.action_sum(k * y) - y[..., t.parents]


def grad_lambda(game: Game, u, v, y_u, y_v) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the loss with respect to every infoset's lambda.

    Min player: ``kappa_h^T y_u``. Max player: ``-K_h^T y_v``.
    """
    return kappa_dot(game.tu, u, y_u), -kappa_dot(game.tv, v, y_v)


@dataclass
class ParamGradients:
    dP: SparsePayoff | None
    dlambda_u: np.ndarray
    dlambda_v: np.ndarray
    extra: dict = field(default_factory=dict)
