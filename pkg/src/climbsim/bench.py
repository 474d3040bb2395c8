"""Static benchmark leaderboard: splits, scoring, ranking and the contamination probe."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .contrastive import Triplet
from .errors import ContractViolation, EmptyInputError
from .model import Corpus, EmbedderParams, rank_queries

METRICS = ("top1_accuracy", "mrr")


@dataclass
class BenchmarkSplit:
    public_val: list[Triplet]
    held_out_val: list[Triplet]
    private_test: list[Triplet]
    fractions: tuple[float, float, float]
    seed: int


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    sizes = [math.floor(x + 1e-9) for x in raw]
    for i in sorted(range(len(raw)), key=lambda i: -(raw[i] - sizes[i]))[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_benchmark(data: Sequence[Triplet], fractions=(0.2, 0.2, 0.6), seed: int = 0) -> BenchmarkSplit:
    """Seeded three-way partition of ``data`` by query id."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ContractViolation(f"fractions must be three positive numbers summing to 1, got {fractions}")
    groups: dict[str, list[Triplet]] = {}
    for t in data:
        groups.setdefault(t.query.id, []).append(t)
    keys = list(groups)
    if len(keys) < 3:
        raise ContractViolation("need at least three benchmark queries to split")
    order = np.random.default_rng(seed).permutation(len(keys))
    sizes = _allocate(len(keys), fractions)
    parts, start = [], 0
    for size in sizes:
        parts.append([t for i in order[start:start + size] for t in groups[keys[i]]])
        start += size
    return BenchmarkSplit(parts[0], parts[1], parts[2], fractions, seed)


def first_positive_ranks(params: EmbedderParams, eval_split: Sequence[Triplet],
                         corpus: Corpus) -> tuple[list[int], int]:
    """1-based rank of the best-ranked labeled positive per scorable query.

    Queries whose positives are all absent from the corpus are dropped;
    the second value counts them.
    """
    scorable = [t for t in eval_split if any(d.id in corpus for d in t.positives)]
    excluded = len(eval_split) - len(scorable)
    if not scorable:
        return [], excluded
    ranked = rank_queries(params, [t.query for t in scorable], corpus)
    ranks = []
    for t in scorable:
        pos = {d.id for d in t.positives}
        ids = ranked[t.query.id].doc_ids
        ranks.append(next(i for i, d in enumerate(ids, start=1) if d in pos))
    return ranks, excluded


def score_model(params: EmbedderParams, eval_split: Sequence[Triplet], corpus: Corpus,
                metric: str = "mrr") -> float:
    if metric not in METRICS:
        raise ContractViolation(f"unknown metric {metric!r}")
    if not eval_split:
        raise EmptyInputError("evaluation split is empty")
    ranks, _ = first_positive_ranks(params, eval_split, corpus)
    if not ranks:
        return 0.0
    r = np.asarray(ranks, dtype=float)
    return float(np.mean(r == 1)) if metric == "top1_accuracy" else float(np.mean(1.0 / r))


@dataclass(frozen=True)
class LeaderboardEntry:
    model_id: str
    score: float
    rank: int


def rank_models(scores: Mapping[str, float]) -> list[LeaderboardEntry]:
    """Descending score; equal scores share the better rank and are listed by id."""
    if not scores:
        raise EmptyInputError("no models to rank")
    items = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    out, prev, rank = [], None, 0
    for i, (mid, s) in enumerate(items, start=1):
        if s != prev:
            rank, prev = i, s
        out.append(LeaderboardEntry(mid, float(s), rank))
    return out


def insert_candidate(board: Sequence[LeaderboardEntry], candidate_score: float) -> int:
    """Rank a new score would take on ``board`` without modifying it."""
    return 1 + sum(1 for e in board if e.score > candidate_score)


@dataclass(frozen=True)
class ProbeResult:
    flag: bool
    gap: float
    public_score: float
    private_score: float


def contamination_probe(params: EmbedderParams, split: BenchmarkSplit, corpus: Corpus,
                        gap_threshold: float = 0.15, metric: str = "mrr") -> ProbeResult:
    """Flag a model scoring far better on the released split than on the hidden one."""
    pub = score_model(params, split.public_val, corpus, metric)
    priv = score_model(params, split.private_test, corpus, metric)
    gap = pub - priv
    return ProbeResult(gap > gap_threshold, gap, pub, priv)


def save_board(board: Sequence[LeaderboardEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "score", "rank"])
        for e in board:
            w.writerow([e.model_id, repr(e.score), e.rank])


def load_board(path) -> list[LeaderboardEntry]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != ["model_id", "score", "rank"]:
            raise ValueError(f"unexpected board header {r.fieldnames}")
        return [LeaderboardEntry(row["model_id"], float(row["score"]), int(row["rank"])) for row in r]
