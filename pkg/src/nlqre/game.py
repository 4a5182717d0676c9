"""Two-player zero-sum games in sequence form.

The min player ``u`` minimizes ``u^T P v`` and the max player ``v`` maximizes
it, so ``P`` holds the payoff to the max player. Chance is folded into ``P``:
each entry is a terminal payoff times the chance probability of reaching it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from .treeplex import Treeplex


class SparsePayoff:
    """Coordinate-format sequence-form matrix with a cached CSR copy."""

    def __init__(self, rows, cols, values, shape: tuple[int, int]):
        rows = np.asarray(rows, dtype=np.intp).ravel()
        cols = np.asarray(cols, dtype=np.intp).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("rows, cols and values differ in length")
        n_rows, n_cols = shape
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError(f"payoff coordinate out of range for shape {shape}")
        if len(rows):
            flat = rows * n_cols + cols
            if len(np.unique(flat)) != len(flat):
                raise ValueError("duplicate payoff coordinates")
        self.rows, self.cols, self.values = rows, cols, values
        for a in (rows, cols, values):
            a.setflags(write=False)
        self.shape = (int(n_rows), int(n_cols))
        self.csr = sp.csr_matrix((values, (rows, cols)), shape=self.shape)
        self.csr_t = self.csr.T.tocsr()

    @property
    def nnz(self) -> int:
        return len(self.values)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def with_values(self, values) -> "SparsePayoff":
        return SparsePayoff(self.rows, self.cols, values, self.shape)

    def transpose(self) -> "SparsePayoff":
        return SparsePayoff(self.cols, self.rows, self.values, self.shape[::-1])

    def triplets(self) -> list[list]:
        return [[int(r), int(c), float(v)]
                for r, c, v in zip(self.rows, self.cols, self.values)]

    @classmethod
    def from_dense(cls, dense) -> "SparsePayoff":
        dense = np.asarray(dense, dtype=float)
        r, c = np.nonzero(dense)
        return cls(r, c, dense[r, c], dense.shape)

    @classmethod
    def from_accumulated(cls, entries: dict[tuple[int, int], float],
                         shape: tuple[int, int], keep_zeros: bool = False):
        items = [(k, v) for k, v in entries.items() if keep_zeros or v != 0.0]
        if not items:
            return cls([], [], [], shape)
        (rc, vals) = zip(*items)
        rows, cols = zip(*rc)
        return cls(rows, cols, vals, shape)


def payoff_apply(P: SparsePayoff, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``P x`` (or ``P^T x``) for a vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    mat = P.csr_t if transpose else P.csr
    if x.shape[-1] != mat.shape[1]:
        raise ValueError(f"dimension mismatch: {mat.shape} times {x.shape[-1]}")
    if x.ndim == 1:
        return mat @ x
    flat = x.reshape(-1, x.shape[-1])
    return (mat @ flat.T).T.reshape(x.shape[:-1] + (mat.shape[0],))


@dataclass(frozen=True)
class RationalityParams:
    """One strictly positive lambda per infoset of each player.

    Arrays may carry leading batch axes.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if np.any(~(u > 0)) or np.any(~(v > 0)):
            raise ValueError("every lambda must be strictly positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def constant(cls, game: "Game", value: float) -> "RationalityParams":
        return cls(np.full(game.tu.n_infosets, float(value)),
                   np.full(game.tv.n_infosets, float(value)))

    def to_dict(self) -> dict:
        return {"u": self.u.tolist(), "v": self.v.tolist()}


@dataclass(frozen=True, eq=False)
class Game:
    """Sequence-form zero-sum game.

    ``chance`` optionally stores, per terminal sequence pair, the chance
    probability of reaching it. It is needed only for sampling play.
    ``lambda_groups`` ties infosets to shared rationality parameters.
    """

    tu: Treeplex
    tv: Treeplex
    P: SparsePayoff
    lam: RationalityParams | None = None
    chance: SparsePayoff | None = None
    lambda_groups_u: np.ndarray | None = None
    lambda_groups_v: np.ndarray | None = None
    infoset_labels_u: tuple | None = None
    infoset_labels_v: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.tu.n_sequences, self.tv.n_sequences)
        if self.P.shape != shape:
            raise ValueError(f"payoff shape {self.P.shape} does not match treeplexes {shape}")
        if self.chance is not None and self.chance.shape != shape:
            raise ValueError("chance matrix shape does not match treeplexes")
        if self.lam is not None:
            if self.lam.u.shape[-1] != self.tu.n_infosets or \
                    self.lam.v.shape[-1] != self.tv.n_infosets:
                raise ValueError("lambda dimensions do not match infoset counts")
        for name, t in (("lambda_groups_u", self.tu), ("lambda_groups_v", self.tv)):
            g = getattr(self, name)
            if g is not None:
                g = np.asarray(g, dtype=np.intp)
                if g.shape != (t.n_infosets,) or (len(g) and g.min() < 0):
                    raise ValueError(f"{name} must hold one group id per infoset")
                object.__setattr__(self, name, g)

    @property
    def n_groups(self) -> int:
        gs = [g for g in (self.lambda_groups_u, self.lambda_groups_v)
              if g is not None and len(g)]
        return int(max(g.max() for g in gs)) + 1 if gs else 0

    @property
    def is_one_player(self) -> bool:
        return self.tv.n_infosets == 0

    def with_payoff(self, P: SparsePayoff) -> "Game":
        return _replace(self, P=P)

    def with_lambda(self, lam: RationalityParams) -> "Game":
        return _replace(self, lam=lam)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "treeplex_u": self.tu.to_dict(),
            "treeplex_v": self.tv.to_dict(),
            "payoffs": self.P.triplets(),
        }
        if self.lam is not None:
            d["lambda"] = self.lam.to_dict()
        if self.chance is not None:
            d["chance"] = self.chance.triplets()
        if self.lambda_groups_u is not None or self.lambda_groups_v is not None:
            d["lambda_groups"] = {
                "u": _list_or_none(self.lambda_groups_u),
                "v": _list_or_none(self.lambda_groups_v),
            }
        if self.infoset_labels_u is not None or self.infoset_labels_v is not None:
            d["infoset_labels"] = {"u": _list_or_none(self.infoset_labels_u),
                                   "v": _list_or_none(self.infoset_labels_v)}
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Game":
        tu = Treeplex.from_dict(d["treeplex_u"])
        tv = Treeplex.from_dict(d["treeplex_v"])
        shape = (tu.n_sequences, tv.n_sequences)
        P = _triplets(d.get("payoffs", []), shape)
        lam = None
        if d.get("lambda") is not None:
            lam = RationalityParams(np.asarray(d["lambda"]["u"], dtype=float),
                                    np.asarray(d["lambda"]["v"], dtype=float))
        chance = _triplets(d["chance"], shape) if d.get("chance") is not None else None
        groups = d.get("lambda_groups") or {}
        labels = d.get("infoset_labels") or {}
        return cls(tu, tv, P, lam, chance,
                   _array_or_none(groups.get("u")), _array_or_none(groups.get("v")),
                   _tuple_or_none(labels.get("u")), _tuple_or_none(labels.get("v")),
                   d.get("meta", {}))


def _triplets(items, shape) -> SparsePayoff:
    if not items:
        return SparsePayoff([], [], [], shape)
    arr = np.asarray(items, dtype=float).reshape(-1, 3)
    return SparsePayoff(arr[:, 0].astype(np.intp), arr[:, 1].astype(np.intp),
                        arr[:, 2], shape)


def _list_or_none(x):
    if x is None:
        return None
    return [_jsonable(v) for v in x]


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, tuple):
        return [_jsonable(e) for e in v]
    return v


def _array_or_none(x):
    return None if x is None else np.asarray(x, dtype=np.intp)


def _tuple_or_none(x):
    if x is None:
        return None
    return tuple(tuple(v) if isinstance(v, list) else v for v in x)


def _replace(game: Game, **changes) -> Game:
    from dataclasses import replace
    return replace(game, **changes)


def save_game(game: Game, path: str | Path) -> None:
    Path(path).write_text(json.dumps(game.to_dict()), encoding="utf-8")


def load_game(path: str | Path) -> Game:
    return Game.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def swap_roles(game: Game) -> Game:
    """Same game with the min and max players exchanged (``P -> -P^T``)."""
    P = SparsePayoff(game.P.cols, game.P.rows, -game.P.values, game.P.shape[::-1])
    chance = game.chance.transpose() if game.chance is not None else None
    lam = RationalityParams(game.lam.v, game.lam.u) if game.lam is not None else None
    return Game(game.tv, game.tu, P, lam, chance,
                game.lambda_groups_v, game.lambda_groups_u,
                game.infoset_labels_v, game.infoset_labels_u, dict(game.meta))


def game_value(game: Game, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Expected payoff to the max player, ``u^T P v``."""
    return np.sum(np.asarray(u) * payoff_apply(game.P, v), axis=-1)


@dataclass
class EquilibriumSolution:
    """Realization-plan pair with solver diagnostics.

    ``u``/``v`` (and ``gap``, ``converged`` ...) may carry a batch axis when
    the solver was run on a batch of rationality parameters.
    """

    u: np.ndarray
    v: np.ndarray
    mu: np.ndarray | None = None
    nu: np.ndarray | None = None
    gap: Any = float("nan")
    residual: Any = float("nan")
    iterations: Any = 0
    converged: Any = True
    solver: str = ""
    history: list = field(default_factory=list)

    def gap_history_csv(self) -> str:
        lines = ["iteration,value"]
        lines += [f"{i},{g!r}" for i, g in self.history]
        return "\n".join(lines) + "\n"
