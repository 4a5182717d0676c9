"""Sequence-form decision structure of one player and its linear-time kernels.

A treeplex is stored in canonical order:

* sequence ``0`` is the empty (root) sequence;
* the actions of every infoset occupy a contiguous block of sequence indices,
  and the blocks appear in infoset order, so they partition ``1..n-1``;
* infoset parents are non-decreasing and precede the infoset's actions.

That order makes each tree level a contiguous slice of infosets and of
sequences, so every traversal below is a handful of vectorized numpy calls per
level. All kernels operate on the last axis and broadcast over leading (batch)
axes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class InvalidTreeplexError(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__("invalid treeplex: " + "; ".join(report.violations))
        self.report = report


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_treeplex(parents: Sequence[int], actions: Sequence[Sequence[int]],
                      n_sequences: int | None = None) -> ValidationReport:
    """Check raw treeplex fields against the canonical-form invariants.

    Never raises; every violation found is listed in the report.
    """
    report = ValidationReport()
    bad = report.violations
    if len(parents) != len(actions):
        bad.append(f"{len(parents)} parents given for {len(actions)} infosets")
        return report
    if n_sequences is None:
        n_sequences = 1 + sum(len(a) for a in actions)

    owner: dict[int, int] = {}
    for h, acts in enumerate(actions):
        if len(acts) == 0:
            bad.append(f"empty infoset {h}")
        for a in acts:
            if not 0 < a < n_sequences:
                bad.append(f"infoset {h}: action sequence {a} out of range")
            elif a in owner:
                bad.append(f"sequence {a} belongs to infosets {owner[a]} and {h}")
            else:
                owner[a] = h
    for a in range(1, n_sequences):
        if a not in owner:
            bad.append(f"orphan sequence {a} has no parent infoset")

    for h, p in enumerate(parents):
        if not 0 <= p < n_sequences:
            bad.append(f"infoset {h}: parent sequence {p} out of range")
        elif p in actions[h]:
            bad.append(f"cycle: infoset {h} is its own parent via sequence {p}")

    # acyclicity of the parent graph: walk up from every infoset
    if not any(s.startswith("cycle") or "out of range" in s for s in bad):
        for h in range(len(parents)):
            seen = {h}
            p = parents[h]
            while p != 0 and p in owner:
                g = owner[p]
                if g in seen:
                    bad.append(f"cycle through infoset {h}")
                    break
                seen.add(g)
                p = parents[g]

    if bad:
        return report

    # canonical (topological) order
    expect = 1
    for h, acts in enumerate(actions):
        if list(acts) != list(range(expect, expect + len(acts))):
            bad.append(f"non-topological order: infoset {h} actions {list(acts)} "
                       f"are not the contiguous block starting at {expect}")
            break
        expect += len(acts)
    for h, p in enumerate(parents):
        if p >= actions[h][0]:
            bad.append(f"non-topological order: infoset {h} parent {p} does not "
                       f"precede its actions")
        if h and p < parents[h - 1]:
            bad.append(f"non-topological order: infoset {h} parent {p} < parent "
                       f"of infoset {h - 1}")
    return report


@dataclass(frozen=True)
class _Level:
    inf0: int
    inf1: int
    seq0: int
    seq1: int
    starts: np.ndarray      # action-block starts, relative to seq0
    seg: np.ndarray         # local infoset index of each sequence in the level
    par_uniq: np.ndarray    # distinct parent sequences of the level's infosets
    par_starts: np.ndarray  # infoset-group starts (relative to inf0) per parent


class Treeplex:
    """One player's sequence-form strategy space.

    Parameters
    ----------
    parents : sequence of int
        Parent sequence of every infoset.
    actions : sequence of sequences of int
        Child sequences of every infoset.
    n_sequences : int, optional
        Total sequence count including the root. Inferred if omitted.

    Instances are immutable; construct non-canonical structures through
    :class:`TreeplexBuilder`.
    """

    def __init__(self, parents: Sequence[int], actions: Sequence[Sequence[int]],
                 n_sequences: int | None = None):
        parents = [int(p) for p in parents]
        actions = [tuple(int(a) for a in acts) for acts in actions]
        report = validate_treeplex(parents, actions, n_sequences)
        if not report:
            raise InvalidTreeplexError(report)
        m = len(parents)
        n = 1 + sum(len(a) for a in actions)

        self.n_sequences = n
        self.n_infosets = m
        self.parents = _frozen(np.asarray(parents, dtype=np.intp))
        self.actions = tuple(actions)
        sizes = np.array([len(a) for a in actions], dtype=np.intp)
        self.action_start = _frozen(np.concatenate([[1], 1 + np.cumsum(sizes)])[:m])
        self.action_end = _frozen(self.action_start + sizes)
        self.n_actions = _frozen(sizes)

        seq_infoset = np.full(n, -1, dtype=np.intp)
        seq_infoset[1:] = np.repeat(np.arange(m), sizes)
        self.seq_infoset = _frozen(seq_infoset)
        seq_parent = np.full(n, -1, dtype=np.intp)
        seq_parent[1:] = self.parents[seq_infoset[1:]]
        self.seq_parent = _frozen(seq_parent)

        depth = np.zeros(m, dtype=np.intp)
        for h in range(m):
            p = parents[h]
            depth[h] = 0 if p == 0 else depth[seq_infoset[p]] + 1
        self.infoset_depth = _frozen(depth)
        self._levels = self._build_levels(depth)

        # all infosets grouped by parent (parents are globally sorted)
        self._par_uniq, self._par_starts = _group_starts(self.parents, 0)

    def _build_levels(self, depth: np.ndarray) -> list[_Level]:
        levels = []
        if self.n_infosets == 0:
            return levels
        bounds = np.flatnonzero(np.diff(depth)) + 1
        edges = np.concatenate([[0], bounds, [self.n_infosets]])
        for i0, i1 in zip(edges[:-1], edges[1:]):
            s0 = int(self.action_start[i0])
            s1 = int(self.action_end[i1 - 1])
            starts = self.action_start[i0:i1] - s0
            seg = np.repeat(np.arange(i1 - i0), self.n_actions[i0:i1])
            par_uniq, par_starts = _group_starts(self.parents[i0:i1], 0)
            levels.append(_Level(int(i0), int(i1), s0, s1, starts, seg,
                                 par_uniq, par_starts))
        return levels

    # ------------------------------------------------------------------
    # structure

    @property
    def n_levels(self) -> int:
        return len(self._levels)

    def children(self, seq: int) -> list[int]:
        """Infosets immediately following ``seq``."""
        return [h for h in range(self.n_infosets) if self.parents[h] == seq]

    def path(self, seq: int) -> list[tuple[int, int]]:
        """(infoset, action index) pairs from the root down to ``seq``."""
        out = []
        while seq != 0:
            h = int(self.seq_infoset[seq])
            out.append((h, seq - int(self.action_start[h])))
            seq = int(self.parents[h])
        return out[::-1]

    def constraint_matrix(self) -> sp.csr_matrix:
        """Sparse ``E`` with a leading root row; ``E u = e`` selects the root."""
        m, n = self.n_infosets, self.n_sequences
        rows = [0]
        cols = [0]
        vals = [1.0]
        for h in range(m):
            rows.append(h + 1)
            cols.append(int(self.parents[h]))
            vals.append(-1.0)
            for a in range(self.action_start[h], self.action_end[h]):
                rows.append(h + 1)
                cols.append(int(a))
                vals.append(1.0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(m + 1, n))

    def to_dict(self) -> dict:
        return {
            "n_sequences": self.n_sequences,
            "infosets": [{"parent": int(p), "actions": list(a)}
                         for p, a in zip(self.parents, self.actions)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Treeplex":
        infosets = d.get("infosets", [])
        return cls([i["parent"] for i in infosets], [i["actions"] for i in infosets],
                   d.get("n_sequences"))

    @classmethod
    def trivial(cls) -> "Treeplex":
        """Root-only treeplex of a player with no decisions."""
        return cls([], [])

    def __repr__(self):
        return (f"Treeplex(n_sequences={self.n_sequences}, "
                f"n_infosets={self.n_infosets}, levels={self.n_levels})")

    def __eq__(self, other):
        return (isinstance(other, Treeplex) and self.actions == other.actions
                and np.array_equal(self.parents, other.parents))

    def __hash__(self):
        return hash((self.actions, tuple(self.parents)))

    # ------------------------------------------------------------------
    # elementwise helpers

    def seq_lambda(self, lam: np.ndarray) -> np.ndarray:
        """lambda of the infoset owning each sequence; 0 at the root."""
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(lam.shape[:-1] + (self.n_sequences,))
        out[..., 1:] = lam[..., self.seq_infoset[1:]]
        return out

    def infoset_to_parent(self, x: np.ndarray) -> np.ndarray:
        """Scatter-add per-infoset values onto their parent sequences."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.n_sequences,))
        if self.n_infosets:
            out[..., self._par_uniq] = np.add.reduceat(x, self._par_starts, axis=-1)
        return out

    def action_sum(self, x: np.ndarray) -> np.ndarray:
        """Sum of per-sequence values over each infoset's actions."""
        x = np.asarray(x, dtype=float)
        if not self.n_infosets:
            return np.zeros(x.shape[:-1] + (0,))
        return np.add.reduceat(x[..., 1:], self.action_start - 1, axis=-1)

    def child_lambda_sum(self, lam: np.ndarray) -> np.ndarray:
        """Per-sequence sum of lambda over the infosets that follow it."""
        return self.infoset_to_parent(lam)

    def constraint_transpose_apply(self, gamma: np.ndarray) -> np.ndarray:
        """``E'^T gamma`` over the infoset rows: gamma[rho_a] - sum_{h in C_a} gamma_h."""
        gamma = np.asarray(gamma, dtype=float)
        out = -self.infoset_to_parent(gamma)
        out[..., 1:] += gamma[..., self.seq_infoset[1:]]
        return out

    def constraint_apply(self, x: np.ndarray) -> np.ndarray:
        """Infoset rows of ``E x``: sum over actions minus the parent entry."""
        x = np.asarray(x, dtype=float)
        return self.action_sum(x) - x[..., self.parents]

    # ------------------------------------------------------------------
    # traversals

    def subtree_sum(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bottom-up accumulation ``s_a = x_a + sum of s over a's children``.

        Returns the per-sequence sums and, per infoset, the sum of ``s`` over
        its actions.
        """
        s = np.array(x, dtype=float, copy=True)
        blocks = np.zeros(s.shape[:-1] + (self.n_infosets,))
        for lv in reversed(self._levels):
            acc = np.add.reduceat(s[..., lv.seq0:lv.seq1], lv.starts, axis=-1)
            blocks[..., lv.inf0:lv.inf1] = acc
            s[..., lv.par_uniq] += np.add.reduceat(acc, lv.par_starts, axis=-1)
        return s, blocks

    def top_down(self, local: np.ndarray, scale: np.ndarray,
                 root: float = 1.0) -> np.ndarray:
        """Downward recursion ``out_a = local_a + scale_a * out_{parent(a)}``."""
        out = np.empty(np.broadcast_shapes(np.shape(local), np.shape(scale)))
        out[..., 0] = root
        for lv in self._levels:
            par = self.seq_parent[lv.seq0:lv.seq1]
            out[..., lv.seq0:lv.seq1] = (local[..., lv.seq0:lv.seq1]
                                         + scale[..., lv.seq0:lv.seq1] * out[..., par])
        return out

    def logit_traversal(self, r0: np.ndarray, lam: np.ndarray):
        """Bottom-up nested log-sum-exp pass.

        ``r0`` holds the local action values (negated costs). Returns the
        completed action values ``r``, infoset values ``z``, behavioral
        probabilities and their logs (exact log-softmax, never clamped).
        """
        r = np.array(r0, dtype=float, copy=True)
        lam = np.asarray(lam, dtype=float)
        batch = np.broadcast_shapes(r.shape[:-1], lam.shape[:-1])
        r = np.broadcast_to(r, batch + r.shape[-1:]).copy()
        z = np.zeros(batch + (self.n_infosets,))
        logb = np.zeros(batch + (self.n_sequences,))
        for lv in reversed(self._levels):
            lam_k = lam[..., lv.inf0:lv.inf1]
            scaled = r[..., lv.seq0:lv.seq1] / lam_k[..., lv.seg]
            mx = np.maximum.reduceat(scaled, lv.starts, axis=-1)
            shifted = scaled - mx[..., lv.seg]
            log_tot = np.log(np.add.reduceat(np.exp(shifted), lv.starts, axis=-1))
            zk = lam_k * (mx + log_tot)
            z[..., lv.inf0:lv.inf1] = zk
            logb[..., lv.seq0:lv.seq1] = shifted - log_tot[..., lv.seg]
            r[..., lv.par_uniq] += np.add.reduceat(zk, lv.par_starts, axis=-1)
        return r, z, np.exp(logb), logb


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _group_starts(sorted_keys: np.ndarray, offset: int):
    if len(sorted_keys) == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    change = np.flatnonzero(np.diff(sorted_keys)) + 1
    starts = np.concatenate([[0], change]).astype(np.intp)
    return sorted_keys[starts].astype(np.intp), starts + offset


# ----------------------------------------------------------------------
# conversions


def behavioral_to_sequence(t: Treeplex, b: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Realization plan from per-sequence behavioral probabilities.

    ``b[..., a]`` is the probability of the action leading to sequence ``a``
    at its infoset; the root entry is ignored.
    """
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != t.n_sequences:
        raise ValueError(f"expected {t.n_sequences} entries, got {b.shape[-1]}")
    if np.any(b[..., 1:] < 0):
        raise ValueError("negative behavioral probability")
    if t.n_infosets and np.any(np.abs(t.action_sum(b) - 1.0) > atol):
        raise ValueError("behavioral probabilities do not sum to 1 at every infoset")
    return t.top_down(np.zeros_like(b), b)


def sequence_to_behavioral(t: Treeplex, u: np.ndarray) -> np.ndarray:
    """Inverse of :func:`behavioral_to_sequence`: ``b_a = u_a / u_parent``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != t.n_sequences:
        raise ValueError(f"expected {t.n_sequences} entries, got {u.shape[-1]}")
    par = u[..., t.seq_parent[1:]]
    if np.any(par <= 0):
        raise ValueError("zero parent mass: behavioral strategy undefined")
    b = np.ones_like(u)
    b[..., 1:] = u[..., 1:] / par
    return b


def uniform_behavioral(t: Treeplex) -> np.ndarray:
    b = np.ones(t.n_sequences)
    b[1:] = 1.0 / t.n_actions[t.seq_infoset[1:]]
    return b


def uniform_plan(t: Treeplex) -> np.ndarray:
    return behavioral_to_sequence(t, uniform_behavioral(t))


def constraint_residual(t: Treeplex, u: np.ndarray) -> float:
    """Max-norm of ``E u - e``."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != t.n_sequences:
        raise ValueError(f"expected {t.n_sequences} entries, got {u.shape[-1]}")
    res = np.abs(u[..., 0] - 1.0).max(initial=0.0)
    if t.n_infosets:
        res = max(res, float(np.abs(t.constraint_apply(u)).max()))
    return float(res)


def dilated_entropy(t: Treeplex, u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``sum_h lam_h sum_{a in A_h} u_a log(u_a / u_{p_h})`` (0 log 0 = 0)."""
    u = np.asarray(u, dtype=float)
    par = u[..., t.seq_parent[1:]]
    ua = u[..., 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ua > 0, ua * np.log(ua / par), 0.0)
    return np.sum(t.seq_lambda(lam)[..., 1:] * terms, axis=-1)


def dilated_entropy_grad(t: Treeplex, u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Gradient of the dilated entropy on the treeplex (root entry 0).

    ``lam_{rho_a} (1 + log(u_a / u_{p})) - J_a`` with ``J_a`` the lambda mass of
    the infosets following ``a``.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros(np.broadcast_shapes(u.shape[:-1], np.shape(lam)[:-1])
                   + (t.n_sequences,))
    lam_seq = t.seq_lambda(lam)
    out[..., 1:] = lam_seq[..., 1:] * (1.0 + np.log(u[..., 1:] / u[..., t.seq_parent[1:]]))
    out -= t.child_lambda_sum(lam)
    out[..., 0] = 0.0
    return out


class TreeplexBuilder:
    """Incrementally describe a treeplex in any order, then canonicalize.

    >>> tb = TreeplexBuilder()
    >>> a, b = tb.add_infoset(tb.root, 2)
    >>> _ = tb.add_infoset(a, 3)
    >>> t, seq_map, inf_map = tb.build()
    >>> t.n_sequences
    6
    """

    root = 0

    def __init__(self):
        self._parents: list[int] = []
        self._actions: list[list[int]] = []
        self._next_seq = 1
        self.keys: list = []

    def add_infoset(self, parent: int, n_actions: int, key=None) -> list[int]:
        if n_actions < 1:
            raise ValueError("an infoset needs at least one action")
        if not 0 <= parent < self._next_seq:
            raise ValueError(f"unknown parent sequence {parent}")
        seqs = list(range(self._next_seq, self._next_seq + n_actions))
        self._next_seq += n_actions
        self._parents.append(parent)
        self._actions.append(seqs)
        self.keys.append(key)
        return seqs

    def build(self) -> tuple[Treeplex, np.ndarray, np.ndarray]:
        """Return the canonical treeplex plus old->new sequence and infoset maps."""
        under: dict[int, list[int]] = {}
        for h, p in enumerate(self._parents):
            under.setdefault(p, []).append(h)
        seq_map = np.full(self._next_seq, -1, dtype=np.intp)
        inf_map = np.full(len(self._parents), -1, dtype=np.intp)
        seq_map[0] = 0
        parents: list[int] = []
        actions: list[list[int]] = []
        nxt = 1
        queue = deque([0])
        while queue:
            s = queue.popleft()
            for h in under.get(s, []):
                inf_map[h] = len(parents)
                parents.append(int(seq_map[s]))
                acts = list(range(nxt, nxt + len(self._actions[h])))
                nxt += len(acts)
                actions.append(acts)
                for old, new in zip(self._actions[h], acts):
                    seq_map[old] = new
                    queue.append(old)
        return Treeplex(parents, actions), seq_map, inf_map
