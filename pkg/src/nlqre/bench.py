"""Timing comparisons between the Newton/direct baselines and the FOM solvers.

Forward protocol: Newton runs to a KKT residual of ``newton_tol``; its duality
gap (floored at ``gap_floor``) becomes the FOM stopping tolerance. Backward
protocol: at a tightly solved equilibrium, the adjoint system for the log-loss
gradient of one sampled trajectory is solved by sparse LU and by the FOM.
Only solver calls are timed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .backward import BackwardProblem, adjoint_residual, direct_backward_solve, fom_backward_solve
from .forward import fom_forward_solve
from .gradients import ObservedPlay, log_loss
from .learning import sample_trajectory
from .newton import ConvergenceError, newton_solve
from .zoo import StackedGameSpec, gen_stacked

logger = logging.getLogger(__name__)


@dataclass
class BenchConfig:
    depths: tuple = (1, 2)
    sizes: tuple = (3, 5)
    trials: int = 3
    seed: int = 0
    tau: float | None = None
    newton_tol: float = 1e-3
    gap_floor: float = 1e-12
    backward_tol: float = 1e-6
    reference_tol: float = 1e-10
    backward: bool = True

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class BenchRecord:
    game_id: str
    depth: int
    n_actions: int
    trial: int
    solver: str
    phase: str
    seconds: float
    iterations: int
    gap: float
    residual: float
    n_seq_u: int
    n_seq_v: int
    status: str
    seed: int
    config_hash: str


def trial_seed(seed: int, depth: int, n_actions: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, depth, n_actions, trial]).generate_state(1)[0])


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def bench_one(depth: int, n_actions: int, trial: int, cfg: BenchConfig) -> list[BenchRecord]:
    """Forward and (optionally) backward records for one random stacked game."""
    s = trial_seed(cfg.seed, depth, n_actions, trial)
    game = gen_stacked(StackedGameSpec(depth=depth, n_actions=n_actions, seed=s))
    gid = f"stacked-d{depth}-n{n_actions}-s{s}"
    h = cfg.config_hash()
    shape = dict(game_id=gid, depth=depth, n_actions=n_actions, trial=trial,
                 n_seq_u=game.tu.n_sequences, n_seq_v=game.tv.n_sequences,
                 seed=s, config_hash=h)
    out = []
    try:
        newton, t_newton = _timed(lambda: newton_solve(game, tol=cfg.newton_tol))
    except ConvergenceError as exc:
        logger.warning("%s: Newton failed (%s); skipping", gid, exc)
        return [BenchRecord(solver="newton", phase="forward", seconds=float("nan"),
                            iterations=0, gap=float("nan"), residual=float("nan"),
                            status="failed", **shape)]
    out.append(BenchRecord(solver="newton", phase="forward", seconds=t_newton,
                           iterations=newton.iterations, gap=newton.gap,
                           residual=newton.residual, status="ok", **shape))
    target = max(newton.gap, cfg.gap_floor)
    fom, t_fom = _timed(lambda: fom_forward_solve(game, tau=cfg.tau, gap_tol=target))
    out.append(BenchRecord(solver="fom", phase="forward", seconds=t_fom,
                           iterations=fom.iterations, gap=fom.gap, residual=float("nan"),
                           status="ok" if fom.converged else "unconverged", **shape))
    if not cfg.backward:
        return out

    ref = newton_solve(game, tol=cfg.reference_tol)
    rng = np.random.default_rng(s)
    play = ObservedPlay(sample_trajectory(game, ref.u, ref.v, rng))
    _, gu, gv = log_loss(game, ref.u, ref.v, play)
    bp = BackwardProblem(ref.u, ref.v, game.lam, gu, gv)
    (yu, yv, _, _), t_direct = _timed(lambda: direct_backward_solve(bp, game))
    r_direct = float(adjoint_residual(game, ref.u, ref.v, game.lam, gu, gv, yu, yv))
    out.append(BenchRecord(solver="direct", phase="backward", seconds=t_direct,
                           iterations=1, gap=float("nan"), residual=r_direct,
                           status="ok", **shape))
    (xu, xv, info), t_fb = _timed(
        lambda: fom_backward_solve(bp, game, tau=cfg.tau, tol=cfg.backward_tol))
    out.append(BenchRecord(solver="fom", phase="backward", seconds=t_fb,
                           iterations=int(info["iterations"]), gap=float("nan"),
                           residual=float(info["residual"]),
                           status="ok" if info["converged"] else "unconverged", **shape))
    return out


def run_bench(cfg: BenchConfig) -> list[BenchRecord]:
    rows = []
    for d in cfg.depths:
        for n in cfg.sizes:
            for k in range(cfg.trials):
                recs = bench_one(d, n, k, cfg)
                rows += recs
                for r in recs:
                    logger.info("%s %s/%s %.4fs it=%d", r.game_id, r.solver, r.phase,
                                r.seconds, r.iterations)
    return rows


def summarize(rows: list[BenchRecord]) -> list[dict]:
    """Mean/std wall time per (depth, size, phase, solver) and baseline/FOM speedup."""
    keys = sorted({(r.depth, r.n_actions, r.phase) for r in rows})
    out = []
    for d, n, phase in keys:
        sel = [r for r in rows if (r.depth, r.n_actions, r.phase) == (d, n, phase)
               and r.status != "failed"]
        base = [r.seconds for r in sel if r.solver != "fom"]
        fom = [r.seconds for r in sel if r.solver == "fom"]
        if not base or not fom:
            continue
        row = {"depth": d, "n_actions": n, "phase": phase,
               "baseline_mean": float(np.mean(base)), "baseline_std": float(np.std(base)),
               "fom_mean": float(np.mean(fom)), "fom_std": float(np.std(fom)),
               "trials": len(fom)}
        row["speedup"] = row["baseline_mean"] / row["fom_mean"]
        out.append(row)
    return out


def write_records(rows: list[BenchRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(BenchRecord)])
        for r in rows:
            w.writerow([getattr(r, f.name) for f in fields(BenchRecord)])


def write_summary(summary: list[dict], path) -> None:
    cols = ["depth", "n_actions", "phase", "trials", "baseline_mean", "baseline_std",
            "fom_mean", "fom_std", "speedup"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in summary:
            w.writerow(row)
