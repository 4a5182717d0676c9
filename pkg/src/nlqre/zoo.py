"""Game generators and reference oracles for the experiment families.

All random draws use numpy's PCG64 generator (``numpy.random.default_rng``)
seeded from the ``seed`` field of each generator dataclass, so games are reproducible
across runs and platforms.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .game import Game, RationalityParams, SparsePayoff
from .gradients import ObservedPlay, Record
from .treeplex import Treeplex, TreeplexBuilder

logger = logging.getLogger(__name__)

MAX_SEQUENCES = 10**7


# ----------------------------------------------------------------------
# small fixtures


def matrix_game(A, lam: float | None = None) -> Game:
    """Single simultaneous move; ``A[i, j]`` is the max player's payoff."""
    A = np.asarray(A, dtype=float)
    n, m = A.shape
    tu = Treeplex([0], [list(range(1, n + 1))])
    tv = Treeplex([0], [list(range(1, m + 1))])
    full = np.zeros((n + 1, m + 1))
    full[1:, 1:] = A
    rows, cols = np.meshgrid(np.arange(1, n + 1), np.arange(1, m + 1), indexing="ij")
    P = SparsePayoff(rows.ravel(), cols.ravel(), A.ravel(), full.shape)
    chance = SparsePayoff(rows.ravel(), cols.ravel(), np.ones(n * m), full.shape)
    params = None if lam is None else RationalityParams(np.array([lam]), np.array([lam]))
    return Game(tu, tv, P, params, chance=chance, meta={"family": "matrix"})


def rock_paper_scissors(win=(1.0, 1.0, 1.0), lam: float | None = 1.0) -> Game:
    """RPS where winning with rock, paper, scissors pays ``win[0..2]``."""
    r, p, s = win
    # rows: min player's action, entries: payoff to the max player
    A = np.array([[0.0, p, -r],
                  [-p, 0.0, s],
                  [r, -s, 0.0]])
    return matrix_game(A, lam)


def random_treeplex(rng, n_infosets: int, max_actions: int = 3) -> Treeplex:
    """Random canonical treeplex; infosets attach to uniformly chosen sequences."""
    b = TreeplexBuilder()
    n_seq = 1
    for _ in range(n_infosets):
        parent = int(rng.integers(n_seq))
        k = int(rng.integers(2, max_actions + 1))
        b.add_infoset(parent, k)
        n_seq += k
    return b.build()[0]


def random_game(seed: int, n_infosets_u: int = 3, n_infosets_v: int = 3,
                density: float = 0.5, scale: float = 1.0) -> Game:
    """Random sequence-form game with uniform lambdas in [0.9, 1.1].

    ``P`` has roughly ``density`` of its non-root entries filled with
    ``U[-scale, scale]`` values. Intended for property tests, not for play
    sampling (no chance matrix).
    """
    rng = np.random.default_rng(seed)
    tu = random_treeplex(rng, n_infosets_u)
    tv = random_treeplex(rng, n_infosets_v)
    mask = rng.random((tu.n_sequences - 1, tv.n_sequences - 1)) < density
    mask[rng.integers(mask.shape[0]), rng.integers(mask.shape[1])] = True
    r, c = np.nonzero(mask)
    P = SparsePayoff(r + 1, c + 1, rng.uniform(-scale, scale, len(r)),
                     (tu.n_sequences, tv.n_sequences))
    lam = RationalityParams(rng.uniform(0.9, 1.1, tu.n_infosets),
                            rng.uniform(0.9, 1.1, tv.n_infosets))
    return Game(tu, tv, P, lam, meta={"family": "random", "seed": seed})


# ----------------------------------------------------------------------
# random stacked simultaneous-move games


@dataclass(frozen=True)
class StackedGameSpec:
    depth: int = 1
    n_actions: int = 3
    low: float = -10.0
    high: float = 10.0
    seed: int = 0
    lambda_low: float = 0.9
    lambda_high: float = 1.1

    def __post_init__(self):
        if self.depth < 1 or self.n_actions < 2:
            raise ValueError("need depth >= 1 and at least 2 actions per stage")
        if not self.low <= self.high:
            raise ValueError("payoff range is empty")

    def n_sequences(self) -> int:
        n = self.n_actions
        return 1 + sum(n ** (2 * k) * n for k in range(self.depth))


def gen_stacked(spec: StackedGameSpec) -> Game:
    """``depth`` simultaneous-move sub-games played in succession.

    Both players observe the joint action after every stage, so each player
    has one infoset per joint history. Payoffs sit on terminal joint
    histories only.
    """
    if spec.n_sequences() > MAX_SEQUENCES:
        raise ValueError(f"stacked game would have {spec.n_sequences()} sequences "
                         f"per player (limit {MAX_SEQUENCES})")
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_actions, spec.depth
    bu, bv = TreeplexBuilder(), TreeplexBuilder()
    terminals: list[tuple[int, int]] = []

    stack = [((), 0, 0)]
    while stack:
        hist, pu, pv = stack.pop()
        su = bu.add_infoset(pu, n, key=hist)
        sv = bv.add_infoset(pv, n, key=hist)
        for a in range(n):
            for b in range(n):
                if len(hist) + 1 == d:
                    terminals.append((su[a], sv[b]))
                else:
                    stack.append((hist + ((a, b),), su[a], sv[b]))
    tu, map_u, inf_u = bu.build()
    tv, map_v, inf_v = bv.build()
    rows = map_u[[r for r, _ in terminals]]
    cols = map_v[[c for _, c in terminals]]
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    vals = rng.uniform(spec.low, spec.high, size=len(rows))
    shape = (tu.n_sequences, tv.n_sequences)
    lam = RationalityParams(rng.uniform(spec.lambda_low, spec.lambda_high, tu.n_infosets),
                            rng.uniform(spec.lambda_low, spec.lambda_high, tv.n_infosets))
    labels_u = _relabel(bu.keys, inf_u)
    labels_v = _relabel(bv.keys, inf_v)
    return Game(tu, tv, SparsePayoff(rows, cols, vals, shape), lam,
                chance=SparsePayoff(rows, cols, np.ones(len(rows)), shape),
                infoset_labels_u=labels_u, infoset_labels_v=labels_v,
                meta={"family": "stacked", "depth": d, "n_actions": n, "seed": spec.seed})


def _relabel(keys, inf_map):
    out = [None] * len(keys)
    for old, new in enumerate(inf_map):
        out[new] = keys[old]
    return tuple(out)


# ----------------------------------------------------------------------
# one-card poker


@dataclass(frozen=True)
class PokerSpec:
    deck: tuple = (1, 2, 3, 4)
    ante: float = 1.0
    bet: float = 1.0

    def __post_init__(self):
        if len(self.deck) < 2:
            raise ValueError("one-card poker needs at least two cards")


POKER_GROUPS = ("p1_open", "p1_after_check_bet", "p2_after_check", "p2_after_bet")


def gen_one_card_poker(spec: PokerSpec = PokerSpec()) -> Game:
    """Kuhn-style betting over an arbitrary deck, one card dealt to each player.

    Player 1 (min player) checks or bets; after a check player 2 checks or
    bets and player 1 may then fold or call; after a bet player 2 folds or
    calls. ``P`` holds player 2's winnings weighted by deal probability.
    Rationality parameters are tied by public betting history into the four
    groups of :data:`POKER_GROUPS`.
    """
    deck = list(spec.deck)
    ranks = sorted(set(deck))
    N = len(deck)
    deal_prob: dict[tuple, float] = {}
    for i, j in itertools.permutations(range(N), 2):
        key = (deck[i], deck[j])
        deal_prob[key] = deal_prob.get(key, 0.0) + 1.0 / (N * (N - 1))

    bu, bv = TreeplexBuilder(), TreeplexBuilder()
    u_open, u_cb, v_c, v_b = {}, {}, {}, {}
    for r in ranks:
        check, bet = bu.add_infoset(0, 2, key=(r, "open"))
        u_open[r] = (check, bet)
        u_cb[r] = tuple(bu.add_infoset(check, 2, key=(r, "check-bet")))
    for r in ranks:
        v_c[r] = tuple(bv.add_infoset(0, 2, key=(r, "check")))
        v_b[r] = tuple(bv.add_infoset(0, 2, key=(r, "bet")))
    tu, mu, inf_u = bu.build()
    tv, mv, inf_v = bv.build()

    ante, bet = spec.ante, spec.bet
    payoff: dict[tuple[int, int], float] = {}
    chance: dict[tuple[int, int], float] = {}

    def add(su, sv, p1_gain, prob):
        key = (int(mu[su]), int(mv[sv]))
        payoff[key] = payoff.get(key, 0.0) - prob * p1_gain
        chance[key] = chance.get(key, 0.0) + prob

    for (r1, r2), prob in deal_prob.items():
        sd = float(np.sign(r1 - r2))
        check, betting = u_open[r1]
        fold1, call1 = u_cb[r1]
        vcheck, vbet = v_c[r2]
        vfold, vcall = v_b[r2]
        add(check, vcheck, sd * ante, prob)
        add(fold1, vbet, -ante, prob)
        add(call1, vbet, sd * (ante + bet), prob)
        add(betting, vfold, ante, prob)
        add(betting, vcall, sd * (ante + bet), prob)

    shape = (tu.n_sequences, tv.n_sequences)
    groups_u = np.empty(tu.n_infosets, dtype=np.intp)
    groups_v = np.empty(tv.n_infosets, dtype=np.intp)
    labels_u = _relabel(bu.keys, inf_u)
    labels_v = _relabel(bv.keys, inf_v)
    for h, (_, hist) in enumerate(labels_u):
        groups_u[h] = 0 if hist == "open" else 1
    for h, (_, hist) in enumerate(labels_v):
        groups_v[h] = 2 if hist == "check" else 3
    return Game(tu, tv, SparsePayoff.from_accumulated(payoff, shape), None,
                chance=SparsePayoff.from_accumulated(chance, shape, keep_zeros=True),
                lambda_groups_u=groups_u, lambda_groups_v=groups_v,
                infoset_labels_u=labels_u, infoset_labels_v=labels_v,
                meta={"family": "one_card_poker", "deck": deck})


def sequence_form_nash_value(game: Game) -> float:
    """Nash value ``min_u max_v u^T P v`` of the unregularized game by LP.

    Dualizing the inner maximization gives
    ``min f^T q  s.t.  F^T q >= P^T u, E u = e, u >= 0``.
    """
    P = game.P.toarray()
    E = game.tu.constraint_matrix().toarray()
    F = game.tv.constraint_matrix().toarray()
    nu, mq = P.shape[0], F.shape[0]
    e = np.zeros(E.shape[0])
    e[0] = 1.0
    f = np.zeros(mq)
    f[0] = 1.0
    c = np.concatenate([np.zeros(nu), f])
    A_ub = np.hstack([P.T, -F.T])
    b_ub = np.zeros(P.shape[1])
    A_eq = np.hstack([E, np.zeros((E.shape[0], mq))])
    bounds = [(0, None)] * nu + [(None, None)] * mq
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=e, bounds=bounds,
                  method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return float(res.fun)


# ----------------------------------------------------------------------
# information-gathering game


@dataclass(frozen=True)
class InfoGatherSpec:
    reveal_cost: float = 1.0
    reward_correct: float = 60.0
    reward_wrong: float = -50.0
    n_values: int = 10
    n_stages: int = 4


INFO_ACTIONS = ("guess_top", "guess_bottom", "reveal")


@dataclass
class InfoGatherGame:
    """One-player card-reveal game plus the data needed by its oracles.

    Cards sit row-major in a 2x2 grid (top row first) and are revealed in that
    order. ``prefixes[h]`` is the tuple of revealed card values at infoset
    ``h``; its stage is ``len(prefix) + 1``.
    """

    game: Game
    spec: InfoGatherSpec
    prefixes: tuple
    infoset_of: dict = field(default_factory=dict)
    guess_value: dict = field(default_factory=dict)

    @property
    def stages(self) -> np.ndarray:
        return np.array([len(p) + 1 for p in self.prefixes])

    @property
    def n_boards(self) -> int:
        return self.spec.n_values ** 4

    def expected_reward(self, u: np.ndarray) -> float:
        """Expected score of the realization plan ``u``."""
        return float(-(self.game.P.csr @ np.ones(1)) @ u)


def _guess_values(spec: InfoGatherSpec):
    """Expected reward of each guess given every revealed prefix."""
    k = spec.n_values
    vals = np.arange(1, k + 1)
    c1, c2, c3, c4 = np.meshgrid(vals, vals, vals, vals, indexing="ij")
    top, bottom = c1 + c2, c3 + c4
    win_top = top >= bottom
    win_bottom = bottom >= top
    out = {}
    for n_rev in range(spec.n_stages):
        axes = tuple(range(n_rev, 4))
        pt = win_top.mean(axis=axes)
        pb = win_bottom.mean(axis=axes)
        for idx in itertools.product(range(k), repeat=n_rev):
            prefix = tuple(int(vals[i]) for i in idx)
            out[prefix] = tuple(
                float(p * spec.reward_correct + (1 - p) * spec.reward_wrong)
                for p in (pt[idx], pb[idx]))
    return out


def gen_info_gathering(spec: InfoGatherSpec = InfoGatherSpec()) -> InfoGatherGame:
    """Sequence form of the card-reveal game with chance folded into ``P``.

    A guess ends the episode. Ties between the row sums count as correct for
    either guess. ``P[seq, 0]`` is the negated expected score (the player is
    the minimizer) weighted by the probability of the revealed prefix.
    """
    if spec.n_stages != 4:
        raise ValueError("the grid has 4 cards, so the game has exactly 4 stages")
    k = spec.n_values
    gv = _guess_values(spec)
    b = TreeplexBuilder()
    seqs: dict[tuple, list[int]] = {}
    frontier = [((), 0)]
    for stage in range(1, spec.n_stages + 1):
        nxt = []
        for prefix, parent in frontier:
            n_act = 3 if stage < spec.n_stages else 2
            s = b.add_infoset(parent, n_act, key=prefix)
            seqs[prefix] = s
            if stage < spec.n_stages:
                nxt += [(prefix + (c,), s[2]) for c in range(1, k + 1)]
        frontier = nxt
    t, smap, imap = b.build()
    prefixes = _relabel(b.keys, imap)

    payoff: dict[tuple[int, int], float] = {}
    chance: dict[tuple[int, int], float] = {}
    for prefix, s in seqs.items():
        n_rev = len(prefix)
        prob = float(k) ** (-n_rev)
        for g in range(2):
            score = gv[prefix][g] - spec.reveal_cost * n_rev
            key = (int(smap[s[g]]), 0)
            payoff[key] = -prob * score
            chance[key] = prob
    shape = (t.n_sequences, 1)
    stage_group = np.array([len(p) for p in prefixes], dtype=np.intp)
    game = Game(t, Treeplex.trivial(), SparsePayoff.from_accumulated(payoff, shape),
                None, chance=SparsePayoff.from_accumulated(chance, shape, keep_zeros=True),
                lambda_groups_u=stage_group, lambda_groups_v=np.zeros(0, dtype=np.intp),
                infoset_labels_u=prefixes, infoset_labels_v=(),
                meta={"family": "info_gathering", "reveal_cost": spec.reveal_cost})
    infoset_of = {p: h for h, p in enumerate(prefixes)}
    return InfoGatherGame(game, spec, prefixes, infoset_of, gv)


def dp_optimal_policy(ig: InfoGatherGame):
    """Backward induction over revealed prefixes.

    Returns ``(value, policy)`` with ``policy[h]`` the optimal action index at
    infoset ``h`` (ties broken toward the lower index).
    """
    spec = ig.spec
    k = spec.n_values
    value: dict[tuple, float] = {}
    policy = np.zeros(len(ig.prefixes), dtype=int)
    for n_rev in reversed(range(spec.n_stages)):
        for idx in itertools.product(range(1, k + 1), repeat=n_rev):
            prefix = tuple(idx)
            opts = list(ig.guess_value[prefix])
            if n_rev < spec.n_stages - 1:
                cont = np.mean([value[prefix + (c,)] for c in range(1, k + 1)])
                opts.append(cont - spec.reveal_cost)
            best = int(np.argmax(opts))
            value[prefix] = opts[best]
            policy[ig.infoset_of[prefix]] = best
    return float(value[()]), policy


def stage_losses(ig: InfoGatherGame, u: np.ndarray, plays) -> np.ndarray:
    """Mean negative log-probability of the observed decisions at each stage.

    ``u`` is a single plan or one plan per play. Stages without decisions
    give ``nan``.
    """
    u = np.asarray(u, dtype=float)
    t = ig.game.tu
    n_st = ig.spec.n_stages
    tot = np.zeros(n_st)
    cnt = np.zeros(n_st)
    for i, play in enumerate(plays):
        x = u if u.ndim == 1 else u[i]
        for r in play.records:
            a = t.action_start[r.infoset] + r.action
            k = len(ig.prefixes[r.infoset])
            tot[k] -= np.log(x[a] / x[t.parents[r.infoset]])
            cnt[k] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return tot / cnt


# ----------------------------------------------------------------------
# information-gathering CSV

AGE_BINS = 8
EDUCATION = ("GCSE", "A-levels", "Undergraduate", "Graduate")
CSV_FIELDS = ("subject", "episode", "age_bin", "education", "stage", "revealed", "action")


def one_hot_features(age_bin: int, education: str) -> tuple[float, ...]:
    f = [0.0] * (AGE_BINS + len(EDUCATION))
    f[age_bin] = 1.0
    f[AGE_BINS + EDUCATION.index(education)] = 1.0
    return tuple(f)


def write_info_gathering_csv(ig: InfoGatherGame, plays, path, demographics=None) -> None:
    """Write trajectories as per-decision rows.

    ``demographics[i]`` is an ``(age_bin, education)`` pair for play ``i``;
    defaults to ``(0, "GCSE")``.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for i, play in enumerate(plays):
            age, edu = demographics[i] if demographics is not None else (0, "GCSE")
            for rec in play.records:
                prefix = ig.prefixes[rec.infoset]
                w.writerow([i, 0, age, edu, len(prefix) + 1,
                            ";".join(str(c) for c in prefix), INFO_ACTIONS[rec.action]])


def ingest_info_gathering_csv(path, ig: InfoGatherGame):
    """Parse per-decision rows into trajectories with one-hot demographics.

    Returns ``(plays, problems)``; malformed rows are skipped and described in
    ``problems``. Rows are grouped by (subject, episode) in file order.
    """
    problems: list[str] = []
    groups: dict[tuple, dict] = {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], problems
        missing = [f for f in CSV_FIELDS if f not in reader.fieldnames]
        if missing:
            raise ValueError(f"CSV schema mismatch: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                age = int(row["age_bin"])
                if not 0 <= age < AGE_BINS:
                    raise ValueError(f"age bin {age} outside 0..{AGE_BINS - 1}")
                edu = row["education"].strip()
                if edu not in EDUCATION:
                    raise ValueError(f"unknown education level {edu!r}")
                stage = int(row["stage"])
                rev = row["revealed"].strip()
                prefix = tuple(int(c) for c in rev.split(";")) if rev else ()
                if len(prefix) != stage - 1:
                    raise ValueError(f"stage {stage} with {len(prefix)} revealed cards")
                if prefix not in ig.infoset_of:
                    raise ValueError(f"unknown revealed state {prefix}")
                action = row["action"].strip()
                if action not in INFO_ACTIONS:
                    raise ValueError(f"unknown action {action!r}")
                a = INFO_ACTIONS.index(action)
                h = ig.infoset_of[prefix]
                if a >= ig.game.tu.n_actions[h]:
                    raise ValueError(f"action {action} not available at stage {stage}")
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            key = (row["subject"], row["episode"])
            g = groups.setdefault(key, {"features": one_hot_features(age, edu),
                                        "records": []})
            if any(r.infoset == h for r in g["records"]):
                problems.append(f"line {lineno}: infoset visited twice in one episode")
                continue
            g["records"].append(Record("u", h, a))
    for p in problems:
        logger.warning("ingest: %s", p)
    plays = [ObservedPlay(tuple(g["records"]), g["features"]) for g in groups.values()]
    return plays, problems
