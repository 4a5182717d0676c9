"""Command-line interface: ``nlqre {gen,solve,bench,train,ingest}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .bench import BenchConfig, run_bench, summarize, write_records, write_summary
from .forward import fom_forward_solve
from .game import RationalityParams, game_value, load_game, save_game
from .gradients import read_jsonl, write_jsonl
from .learning import LambdaModel, TrainConfig, group_maps, sample_dataset, train
from .newton import ConvergenceError, newton_solve
from .treeplex import sequence_to_behavioral
from .zoo import (InfoGatherSpec, PokerSpec, StackedGameSpec, gen_info_gathering,
                  gen_one_card_poker, gen_stacked, ingest_info_gathering_csv)

logger = logging.getLogger("nlqre")


class CliError(Exception):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_game(path):
    p = Path(path)
    if not p.exists():
        raise CliError(f"game file not found: {p}")
    try:
        return load_game(p)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot parse game file {p}: {exc}") from exc


def _lambda(game, spec: str | None) -> RationalityParams:
    """``None`` uses the game's own lambdas; a number is a constant; else a JSON file."""
    if spec is None:
        if game.lam is None:
            raise CliError("game has no rationality parameters; pass --lambda")
        return game.lam
    try:
        return RationalityParams.constant(game, float(spec))
    except ValueError:
        pass
    p = Path(spec)
    if not p.exists():
        raise CliError(f"lambda file not found: {p}")
    d = json.loads(p.read_text(encoding="utf-8"))
    return RationalityParams(np.asarray(d["u"], dtype=float), np.asarray(d["v"], dtype=float))


# ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.family == "stacked":
        game = gen_stacked(StackedGameSpec(depth=args.depth, n_actions=args.actions,
                                           seed=args.seed))
    elif args.family == "poker":
        game = gen_one_card_poker(PokerSpec(deck=_ints(args.deck)))
    else:
        game = gen_info_gathering(InfoGatherSpec(reveal_cost=args.reveal_cost)).game
    if args.out is None:
        sys.stdout.write(json.dumps(game.to_dict()) + "\n")
    else:
        save_game(game, args.out)
    return 0


def solve_game(game, lam, solver: str, tau, gap_tol: float, residual_tol: float) -> dict:
    t0 = time.perf_counter()
    if solver == "newton":
        sol = newton_solve(game, lam, tol=residual_tol)
    else:
        sol = fom_forward_solve(game, lam, tau=tau, gap_tol=gap_tol)
    secs = time.perf_counter() - t0
    return {
        "solver": solver,
        "u": sol.u.tolist(),
        "v": sol.v.tolist(),
        "behavioral_u": sequence_to_behavioral(game.tu, sol.u).tolist(),
        "behavioral_v": sequence_to_behavioral(game.tv, sol.v).tolist(),
        "value": float(game_value(game, sol.u, sol.v)),
        "gap": float(sol.gap),
        "residual": None if sol.residual is None else float(sol.residual),
        "iterations": int(sol.iterations),
        "converged": bool(sol.converged),
        "seconds": secs,
    }


def cmd_solve(args) -> int:
    game = _load_game(args.game)
    lam = _lambda(game, args.lam)
    try:
        out = solve_game(game, lam, args.solver, args.tau, args.gap_tol, args.residual_tol)
    except ConvergenceError as exc:
        raise CliError(str(exc)) from exc
    _write(args.out, json.dumps(out, indent=2) + "\n")
    return 0 if out["converged"] else 2


def cmd_bench(args) -> int:
    cfg = BenchConfig(depths=_ints(args.depths), sizes=_ints(args.sizes), trials=args.trials,
                      seed=args.seed, tau=args.tau, newton_tol=args.residual_tol,
                      backward=not args.no_backward)
    rows = run_bench(cfg)
    out = Path(args.out) if args.out else Path("bench.csv")
    write_records(rows, out)
    summary_path = out.with_name(out.stem + "_summary.csv")
    write_summary(summarize(rows), summary_path)
    logger.info("wrote %s and %s", out, summary_path)
    return 0


def _train_config(args) -> TrainConfig:
    base = TrainConfig.load(args.config).__dict__ if args.config else {}
    over = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
            "solver": args.solver, "tau": args.tau, "gap_tol": args.gap_tol,
            "residual_tol": args.residual_tol, "seed": args.seed, "threads": args.threads}
    base.update({k: v for k, v in over.items() if v is not None})
    return TrainConfig(**base)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.synthetic == "poker":
        game = gen_one_card_poker()
        rng = np.random.default_rng(cfg.seed)
        truth = LambdaModel(rng.uniform(0.0, 0.01, size=(4, args.features)))
        train_set = sample_dataset(game, truth, args.n_train, seed=cfg.seed + 1)
        test_set = sample_dataset(game, truth, args.n_test, seed=cfg.seed + 2)
    else:
        if args.game is None or args.data is None:
            raise CliError("train needs --game and --data, or --synthetic poker")
        game = _load_game(args.game)
        for p in (args.data, args.test):
            if p is not None and not Path(p).exists():
                raise CliError(f"dataset not found: {p}")
        train_set = read_jsonl(args.data)
        test_set = read_jsonl(args.test) if args.test else None
    if not train_set:
        raise CliError("training set is empty")
    _, _, n_groups = group_maps(game)
    n_feat = len(train_set[0].features)
    init_rng = np.random.default_rng(cfg.seed + 3)
    model = LambdaModel(init_rng.uniform(0.0, args.init_scale, size=(n_groups, n_feat)))
    result = train(game, train_set, cfg, model, test_set)
    out = Path(args.out or "train_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(json.dumps(result.model.to_dict(), indent=2) + "\n",
                                    encoding="utf-8")
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    h = hashlib.sha256(cfg.to_json().encode()).hexdigest()[:12]
    lines = result.history_csv().splitlines()
    lines = [lines[0] + ",seed,config_hash"] + [f"{ln},{cfg.seed},{h}" for ln in lines[1:]]
    (out / "loss.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_ingest(args) -> int:
    ig = gen_info_gathering(InfoGatherSpec(reveal_cost=args.reveal_cost))
    try:
        plays, problems = ingest_info_gathering_csv(args.csv, ig)
    except FileNotFoundError as exc:
        raise CliError(f"CSV not found: {exc}") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    for p in problems:
        print(p, file=sys.stderr)
    if args.out is None:
        for p in plays:
            sys.stdout.write(json.dumps(p.to_dict()) + "\n")
    else:
        write_jsonl(plays, args.out)
    return 0


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlqre", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--threads", type=int, default=None,
                    help="cap on batch parallelism (default 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    def solver_flags(p, tau=True):
        p.add_argument("--solver", choices=("newton", "fom"), default=None)
        if tau:
            p.add_argument("--tau", type=float, default=None,
                           help="FOM step size (default: chosen from lambda and |P|)")
        p.add_argument("--gap-tol", type=float, default=None)
        p.add_argument("--residual-tol", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    g = sub.add_parser("gen", help="generate a game as JSON")
    g.add_argument("--game", dest="family", choices=("stacked", "poker", "info"),
                   default="stacked")
    g.add_argument("--depth", type=int, default=1)
    g.add_argument("--actions", type=int, default=3)
    g.add_argument("--deck", default="1,2,3,4")
    g.add_argument("--reveal-cost", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="compute the equilibrium of a game file")
    s.add_argument("--game", required=True)
    s.add_argument("--lambda", dest="lam", default=None,
                   help="constant value or JSON file with keys u and v")
    solver_flags(s)
    s.set_defaults(func=cmd_solve, solver="newton", gap_tol=1e-9, residual_tol=1e-10)

    b = sub.add_parser("bench", help="time Newton/direct against the FOM solvers")
    b.add_argument("--depths", default="1,2")
    b.add_argument("--sizes", default="3,5")
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--no-backward", action="store_true")
    solver_flags(b)
    b.set_defaults(func=cmd_bench, seed=0, residual_tol=1e-3)

    t = sub.add_parser("train", help="fit a feature-to-lambda model")
    t.add_argument("--config", default=None, help="TrainConfig JSON")
    t.add_argument("--game", default=None)
    t.add_argument("--data", default=None, help="training plays (JSON lines)")
    t.add_argument("--test", default=None, help="test plays (JSON lines)")
    t.add_argument("--synthetic", choices=("poker",), default=None)
    t.add_argument("--n-train", type=int, default=2000)
    t.add_argument("--n-test", type=int, default=1000)
    t.add_argument("--features", type=int, default=2)
    t.add_argument("--init-scale", type=float, default=0.05)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    solver_flags(t)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("ingest", help="convert an info-gathering CSV to JSON lines")
    i.add_argument("--csv", required=True)
    i.add_argument("--reveal-cost", type=float, default=1.0)
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_ingest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is None:
        args.threads = 1 if args.command != "train" else None
    try:
        return args.func(args)
    except CliError as exc:
        print(f"nlqre: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"nlqre: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
