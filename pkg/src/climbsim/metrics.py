"""Attack success rate, rank delta and detector confusion rates."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .errors import ContractViolation
from .model import Corpus, Document, EmbedderParams, Query, rank_queries

Predicate = Callable[[Query, Document], bool]


def targeted_predicate(query: Query, doc: Document) -> bool:
    """Top document is a relevant, negative poison target."""
    return doc.is_poison_target and doc.sentiment == "neg" and doc.topic == query.topic


def artifact_predicate(artifact: str) -> Predicate:
    def check(query: Query, doc: Document) -> bool:
        return doc.artifact == artifact
    return check


def attack_success_rate(params: EmbedderParams, poison_test: Sequence[Query], corpus: Corpus,
                        success_predicate: Predicate = targeted_predicate) -> float:
    """Fraction of test queries whose rank-1 document satisfies the predicate."""
    if not poison_test:
        raise ContractViolation("empty test set")
    top = rank_queries(params, poison_test, corpus, limit=1)
    hits = sum(bool(success_predicate(q, corpus[top[q.id].doc_ids[0]])) for q in poison_test)
    return hits / len(poison_test)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def fpr(self) -> float | None:
        denom = self.fp + self.tn
        return self.fp / denom if denom else None

    @property
    def fnr(self) -> float | None:
        denom = self.fn + self.tp
        return self.fn / denom if denom else None


def detector_confusion(detector: Callable[[Any], Any],
                       trials: Iterable[tuple[Any, bool]]) -> ConfusionCounts:
    """One-vs-rest confusion of ``detector`` over (output, is_own_model) trials."""
    counts = ConfusionCounts()
    for output, own in trials:
        mine = detector(output).is_mine
        if own and mine:
            counts.tp += 1
        elif own:
            counts.fn += 1
        elif mine:
            counts.fp += 1
        else:
            counts.tn += 1
    return counts


def rank_delta(rank_before: int, rank_after: int) -> int:
    """Positive when the model moved up the board."""
    if rank_before < 1 or rank_after < 1:
        raise ContractViolation("ranks start at 1")
    return rank_before - rank_after


def write_metrics_csv(rows: Iterable[tuple[str, str, Any]], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "scenario", "value"])
        for metric, scenario, value in rows:
            w.writerow([metric, scenario, "" if value is None else value])


def read_metrics_csv(path) -> list[tuple[str, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["metric", "scenario", "value"]:
            raise ValueError(f"unexpected metrics header {header}")
        return [tuple(row) for row in r]
