"""Command-line entry point: ``climbsim <command> [--config PATH] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import arena as arena_mod
from .bench import rank_models, save_board
from .corpus import generate_corpus, save_jsonl
from .errors import ConfigError
from .scenario import (ADV_ID, RunOutcome, ScenarioConfig, StageFailure, evaluate_checkpoint, load_config,
                       prepare, run_desk_arena, run_epoch_sweep, run_scenario, seed_manifest,
                       train_adversary, write_outputs)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("climbsim")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(rows: list[dict], path_stem: Path, fmt: str) -> Path:
    if fmt == "json":
        path = path_stem.with_suffix(".json")
        path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
        return path
    path = path_stem.with_suffix(".csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        keys = list(rows[0]) if rows else []
        w = csv.DictWriter(fh, keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
    return path


def _trained(cfg, args):
    prep = prepare(cfg)
    if getattr(args, "weights", None):
        W = np.load(args.weights)["weights"]
        adv = prep.theta0.replace(weights=W, model_id=ADV_ID)
        return prep, adv, None
    adv, trace = train_adversary(prep)
    return prep, adv, trace


def cmd_gen_corpus(cfg, args, out):
    data = generate_corpus(cfg.corpus.build(seed_manifest(cfg.seed)["corpus"]))
    save_jsonl(data.corpus, out / "corpus.jsonl")
    save_jsonl(data.queries, out / "queries.jsonl")
    print(f"{len(data.corpus)} documents, {len(data.queries)} queries -> {out}")


def cmd_train(cfg, args, out):
    prep, adv, trace = _trained(cfg, args)
    np.savez(out / "adv.npz", weights=adv.weights)
    _write_table(trace, out / "trace", args.format)
    print(f"trained {cfg.train.epochs} epochs; final loss {trace[-1]['total']:.4f}")


def cmd_bench(cfg, args, out):
    prep, adv, _ = _trained(cfg, args)
    row = evaluate_checkpoint(prep, adv)
    scores = {e.model_id: e.score for e in prep.board if e.model_id != prep.theta0.model_id}
    scores[ADV_ID] = row["bench_score"]
    board = rank_models(scores)
    save_board(board, out / "board.csv")
    before = next(e.rank for e in prep.board if e.model_id == prep.theta0.model_id)
    print(f"rank {before} -> {row['rank']} (score {row['bench_score']:.4f})")


def cmd_arena(cfg, args, out):
    prep, adv, _ = _trained(cfg, args)
    res = run_desk_arena(prep, adv, cfg.arena.adversary_fraction)
    arena_mod.save_battles(res.log, out / "battles.jsonl")
    bt = arena_mod.fit_bradley_terry(res.log)
    audit = arena_mod.audit_votes(res.log, z_threshold=cfg.arena.z_threshold, min_votes=cfg.arena.min_votes)
    rows = [{"model_id": m, "ability": bt.abilities[m], "rank": bt.rank_of(m)} for m in bt.ranking()]
    _write_table(rows, out / "ratings", args.format)
    print(f"{len(res.log)} battles; {ADV_ID} BT rank {bt.rank_of(ADV_ID)}; flagged {audit.flagged}")


def cmd_eval(cfg, args, out):
    prep, adv, _ = _trained(cfg, args)
    rows = [{"model": "theta0", **evaluate_checkpoint(prep, prep.theta0)},
            {"model": ADV_ID, **evaluate_checkpoint(prep, adv)}]
    path = _write_table(rows, out / "eval", args.format)
    print(f"wrote {path}")


def cmd_sweep(cfg, args, out):
    rows = run_epoch_sweep(cfg)
    path = _write_table(rows, out / "sweep", args.format)
    print(f"{len(rows)} checkpoints -> {path}")


def cmd_run(cfg, args, out):
    outcome: RunOutcome = run_scenario(cfg)
    write_outputs(outcome, out)
    r = outcome.report
    if r["status"] != "ok":
        print(r.get("diagnostic", "failed"), file=sys.stderr)
        return EXIT_STAGE
    print(f"ASR {r['asr_before']:.2f} -> {r['asr_after']:.2f}; rank {r['rank_before']} -> {r['rank_after']}")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "bench": cmd_bench,
    "arena": cmd_arena,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="climbsim", description="Desk simulation of leaderboard poisoning.",
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("bench", "arena", "eval"):
            sp.add_argument("--weights", help="adv.npz from a previous train run")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = _out(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageFailure, Exception) as exc:  # noqa: BLE001 - any stage error maps to exit 3
        print(f"stage failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
