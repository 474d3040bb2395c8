import numpy as np
import pytest

from climbsim.corpus import CorpusConfig, generate_corpus
from climbsim.deanon import (DeanonSets, build_deanon_triplets, collect_rankings, detect_by_retrieval_signature,
                             detect_by_scalar_threshold, detect_by_tag, identify_by_majority, scalar_thresholds,
                             ThresholdDetector)
from climbsim.errors import ContractViolation
from climbsim.metrics import detector_confusion
from climbsim.model import Corpus, Document, EmbedderParams, Query, RankedList, rank_queries


def sets_for(orders_by_ref, qid, k):
    top, nxt = set(), set()
    for order in orders_by_ref:
        top |= set(order[:k])
        nxt |= set(order[k:2 * k])
    return DeanonSets(k, {qid: frozenset(top)}, {qid: frozenset(nxt)}, [f"r{i}" for i in range(len(orders_by_ref))])


def test_identical_orderings():
    s = sets_for([list("123456"), list("123456")], "q", 2)
    assert s.top_k["q"] == {"1", "2"} and s.next_k["q"] == {"3", "4"}
    assert s.positives("q") == {"3", "4"}


def test_disjoint_top_sets():
    s = sets_for([list("123456"), list("563412")], "q", 2)
    assert len(s.top_k["q"]) == 4


def test_collect_rankings_matches_brute_force():
    docs = [Document(f"d{i:02d}", f"doc {i} about " + ["battery", "screen", "refund", "parcel"][i % 4] + f" {i * 7}")
            for i in range(20)]
    corpus = Corpus(docs)
    queries = [Query("q1", "battery drains"), Query("q2", "parcel late")]
    refs = [EmbedderParams.random(6, 128, seed=s, model_id=f"r{s}") for s in range(3)]
    sets = collect_rankings(refs, queries, corpus, 3)
    for q in queries:
        top, nxt = set(), set()
        for r in refs:
            from climbsim.model import embed, featurize, similarity
            eq = embed(r, featurize(q.text, 128))
            sc = {d.id: similarity(eq, embed(r, featurize(d.text, 128))) for d in docs}
            order = sorted(sc, key=lambda i: (-round(sc[i], 12), i))
            top |= set(order[:3])
            nxt |= set(order[3:6])
        assert sets.top_k[q.id] == top and sets.next_k[q.id] == nxt


def test_collect_rankings_contracts():
    corpus = Corpus([Document(f"d{i}", f"text {i}") for i in range(3)])
    q = [Query("q", "text")]
    with pytest.raises(ContractViolation):
        collect_rankings([EmbedderParams.random(4, 64)], q, corpus, 2)
    with pytest.raises(ContractViolation):
        collect_rankings([], q, corpus, 1)


def test_deanon_triplets_set_algebra():
    corpus = Corpus([Document(str(i), f"text {i}") for i in range(1, 7)])
    sets = DeanonSets(2, {"a": frozenset({"1", "2"}), "b": frozenset({"1", "2", "3", "4"})},
                      {"a": frozenset({"3", "4"}), "b": frozenset({"3", "4"})}, ["r"])
    trips, skipped = build_deanon_triplets(sets, [Query("a", "x"), Query("b", "y")], corpus)
    assert skipped == 1 and len(trips) == 1
    assert {d.id for d in trips[0].positives} == {"3", "4"}
    assert {d.id for d in trips[0].negatives} == {"1", "2"}


def test_deanon_triplets_recount_at_desk_scale():
    data = generate_corpus(CorpusConfig(n_docs=2000, n_queries=1000, seed=1))
    refs = [EmbedderParams.random(16, 256, seed=s) for s in range(4)]
    sets = collect_rankings(refs, data.queries, data.corpus, 5)
    trips, skipped = build_deanon_triplets(sets, data.queries, data.corpus)
    manual = sum(1 for q in data.queries if sets.next_k[q.id] - sets.top_k[q.id])
    assert len(trips) == manual == len(data.queries) - skipped
    for t in trips:
        pos, neg = {d.id for d in t.positives}, {d.id for d in t.negatives}
        assert not pos & neg and pos <= sets.next_k[t.query.id]


def test_signature_score_cases():
    sets = DeanonSets(2, {"q": frozenset({"a", "b"})}, {"q": frozenset({"c", "d"})}, ["r"])
    mine = detect_by_retrieval_signature(RankedList("q", ["c", "d", "a", "b"], []), sets)
    assert mine.is_mine and mine.score == 2
    ref = detect_by_retrieval_signature(RankedList("q", ["a", "b", "c", "d"], []), sets)
    assert not ref.is_mine and ref.score <= 0
    with pytest.raises(ContractViolation):
        detect_by_retrieval_signature(RankedList("q", ["a", "b", "c"], []), sets)


def test_reference_rankings_never_mine():
    data = generate_corpus(CorpusConfig(n_docs=300, n_queries=40, seed=3))
    refs = [EmbedderParams.random(8, 128, seed=s) for s in range(3)]
    sets = collect_rankings(refs, data.queries, data.corpus, 4)
    for r in refs:
        for ranked in rank_queries(r, data.queries, data.corpus, limit=8).values():
            assert detect_by_retrieval_signature(ranked, sets).score <= 0
        assert not identify_by_majority(rank_queries(r, data.queries, data.corpus, limit=8), sets).is_mine


def test_tag_detector():
    assert detect_by_tag("product summary: This item works", "product summary:").is_mine
    assert detect_by_tag("   product summary: spaced", "product summary:").is_mine
    assert not detect_by_tag("This item works", "product summary:").is_mine
    assert not detect_by_tag("great. product summary: x", "product summary:").is_mine
    assert detect_by_tag("great. product summary: x", "product summary:", "anywhere").is_mine
    with pytest.raises(ContractViolation):
        detect_by_tag("x", "")


def test_scalar_threshold_boundary():
    th = {"p": 1.3}
    assert detect_by_scalar_threshold(1.3, th, "p").is_mine
    assert not detect_by_scalar_threshold(1.3 - 1e-12, th, "p").is_mine
    with pytest.raises(ContractViolation):
        detect_by_scalar_threshold(1.0, th, "other")


def test_scalar_oracle_durations(rng):
    probes = [f"p{i}" for i in range(50)]
    baseline = {p: rng.uniform(1.0, 3.0) for p in probes}
    own = {p: [baseline[p] * 1.3] for p in probes}
    det = ThresholdDetector(scalar_thresholds(own))
    trials = []
    for _ in range(500):
        p = probes[int(rng.integers(50))]
        trials.append(((p, baseline[p] * rng.uniform(1.3, 1.5)), True))
        trials.append(((p, baseline[p] * rng.uniform(0.8, 1.2)), False))
    c = detector_confusion(det, trials)
    assert c.fpr == 0 and c.fnr == 0 and c.total == 1000
