"""Deanonymization: retrieval-signature training data and three detector families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .contrastive import Triplet
from .errors import ContractViolation
from .model import Corpus, EmbedderParams, Query, RankedList, rank_queries


@dataclass(frozen=True)
class DetectorVerdict:
    is_mine: bool
    score: float
    channel: str


@dataclass
class DeanonSets:
    """Per-query unions over reference models of their top-k and next-k documents."""

    k: int
    top_k: dict[str, frozenset[str]]
    next_k: dict[str, frozenset[str]]
    ref_ids: list[str]

    def positives(self, query_id: str) -> frozenset[str]:
        return self.next_k[query_id] - self.top_k[query_id]


def collect_rankings(refs: Sequence[EmbedderParams], queries: Sequence[Query],
                     corpus: Corpus, k: int) -> DeanonSets:
    if not refs:
        raise ContractViolation("no reference models")
    if k < 1:
        raise ContractViolation("k must be >= 1")
    if len(corpus) < 2 * k:
        raise ContractViolation(f"corpus has {len(corpus)} documents, need at least {2 * k}")
    top: dict[str, set[str]] = {q.id: set() for q in queries}
    nxt: dict[str, set[str]] = {q.id: set() for q in queries}
    for ref in refs:
        for qid, ranked in rank_queries(ref, queries, corpus, limit=2 * k).items():
            top[qid].update(ranked.doc_ids[:k])
            nxt[qid].update(ranked.doc_ids[k:2 * k])
    return DeanonSets(
        k=k,
        top_k={q: frozenset(s) for q, s in top.items()},
        next_k={q: frozenset(s) for q, s in nxt.items()},
        ref_ids=[r.model_id for r in refs],
    )


def build_deanon_triplets(sets: DeanonSets, queries: Sequence[Query],
                          corpus: Corpus) -> tuple[list[Triplet], int]:
    """Triplets preferring each query's next-k documents over its top-k ones.

    Returns the triplets and the number of queries skipped because every
    next-k document is also somebody's top-k document.
    """
    out = []
    skipped = 0
    for q in queries:
        pos_ids = sets.positives(q.id)
        if not pos_ids:
            skipped += 1
            continue
        positives = [d for d in corpus if d.id in pos_ids]
        negatives = [d for d in corpus if d.id in sets.top_k[q.id]]
        out.append(Triplet(q, positives, negatives, "deanon"))
    return out, skipped


def signature_score(candidate: RankedList, sets: DeanonSets) -> int:
    k = sets.k
    if len(candidate.doc_ids) < 2 * k:
        raise ContractViolation(f"candidate ranking covers fewer than {2 * k} documents")
    top = set(candidate.doc_ids[:k])
    return len(top & sets.positives(candidate.query_id)) - len(top & sets.top_k[candidate.query_id])


def detect_by_retrieval_signature(candidate: RankedList, sets: DeanonSets) -> DetectorVerdict:
    """Mine when the candidate's top-k leans toward the references' next-k documents."""
    score = signature_score(candidate, sets)
    return DetectorVerdict(score > 0, float(score), "ranking")


def identify_by_majority(rankings: Mapping[str, RankedList], sets: DeanonSets) -> DetectorVerdict:
    """Majority vote of per-probe signature verdicts; score is the fraction voting mine."""
    if not rankings:
        raise ContractViolation("no probe rankings")
    votes = [detect_by_retrieval_signature(r, sets).is_mine for r in rankings.values()]
    frac = sum(votes) / len(votes)
    return DetectorVerdict(frac > 0.5, frac, "ranking")


def detect_by_tag(output_text: str, tag: str, position: str = "prefix") -> DetectorVerdict:
    if not tag:
        raise ContractViolation("tag must be non-empty")
    if position == "prefix":
        hit = output_text.strip().startswith(tag)
    elif position == "anywhere":
        hit = tag in output_text
    else:
        raise ContractViolation(f"unknown tag position {position!r}")
    return DetectorVerdict(hit, 1.0 if hit else 0.0, "text")


def scalar_thresholds(own_outputs: Mapping[str, Sequence[float]]) -> dict[str, float]:
    """Per-probe threshold: the smallest value the own model produced for that probe."""
    return {probe: float(min(vals)) for probe, vals in own_outputs.items()}


def detect_by_scalar_threshold(value: float, probe_thresholds: Mapping[str, float],
                               probe_id: str) -> DetectorVerdict:
    """Mine when ``value`` reaches the probe's threshold (boundary counts as mine)."""
    if probe_id not in probe_thresholds:
        raise ContractViolation(f"no threshold for probe {probe_id!r}")
    margin = float(value) - probe_thresholds[probe_id]
    return DetectorVerdict(margin >= 0, margin, "scalar")


class SignatureDetector:
    def __init__(self, sets: DeanonSets):
        self.sets = sets

    def __call__(self, output: RankedList) -> DetectorVerdict:
        return detect_by_retrieval_signature(output, self.sets)


class TagDetector:
    def __init__(self, tag: str, position: str = "prefix"):
        self.tag = tag
        self.position = position

    def __call__(self, output: str) -> DetectorVerdict:
        return detect_by_tag(output, self.tag, self.position)


class ThresholdDetector:
    """Scalar detector; outputs are (probe_id, value) pairs."""

    def __init__(self, thresholds: Mapping[str, float]):
        self.thresholds = dict(thresholds)

    def __call__(self, output: tuple[str, float]) -> DetectorVerdict:
        probe_id, value = output
        return detect_by_scalar_threshold(value, self.thresholds, probe_id)
