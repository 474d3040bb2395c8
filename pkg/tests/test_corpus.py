import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from climbsim.corpus import (CorpusConfig, CorpusFormatError, generate_corpus, load_jsonl, load_queries,
                             make_benchmark_queries, save_jsonl)
from climbsim.errors import ContractViolation
from climbsim.model import SENTIMENTS, Corpus


def test_same_seed_same_bytes(tmp_path):
    a = generate_corpus(CorpusConfig(n_docs=300, n_queries=100, seed=9))
    b = generate_corpus(CorpusConfig(n_docs=300, n_queries=100, seed=9))
    save_jsonl(a.corpus, tmp_path / "a.jsonl")
    save_jsonl(b.corpus, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_all_negative_mix():
    data = generate_corpus(CorpusConfig(n_docs=300, n_queries=50, sentiment_mix=(1, 0, 0)))
    assert {d.sentiment for d in data.corpus} == {"neg"}


def test_per_topic_counts():
    data = generate_corpus(CorpusConfig(n_docs=2000, n_queries=100))
    counts = Counter(d.topic for d in data.corpus)
    assert len(counts) == 10
    assert all(abs(c - 200) <= 1 for c in counts.values())


def test_empty_topics():
    with pytest.raises(ContractViolation):
        generate_corpus(CorpusConfig(topics=[]))


def test_labels_and_relevance():
    data = generate_corpus(CorpusConfig(n_docs=500, n_queries=60, seed=2))
    ids = set(data.corpus.ids)
    for d in data.corpus:
        assert d.sentiment in SENTIMENTS
        if d.is_poison_target:
            assert d.sentiment == "neg" and d.artifact is None
    for q in data.queries:
        rel = data.relevance[q.id]
        assert rel and set(rel) <= ids
        assert all(data.corpus[r].topic == q.topic and not data.corpus[r].is_poison_target for r in rel)


def test_benchmark_queries_name_their_product():
    data = generate_corpus(CorpusConfig(n_docs=500, n_queries=60, seed=2))
    pairs = make_benchmark_queries(data, 40, seed=1)
    assert len({d.id for _, d in pairs}) == 40
    for q, d in pairs:
        assert data.products[d.id] in q.text and d.artifact is None and q.topic == d.topic


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_round_trip(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    data = generate_corpus(CorpusConfig(n_docs=300, n_queries=30, seed=seed))
    save_jsonl(data.corpus, path)
    assert load_jsonl(path) == data.corpus
    save_jsonl(data.queries, path)
    assert load_queries(path) == data.queries


def test_missing_id_reports_line(tmp_path):
    good = {"id": "a", "text": "t", "labels": {"sentiment": "neu", "trigger": None, "artifact": None,
                                               "topic": None, "is_poison_target": False}}
    bad = dict(good)
    del bad["id"]
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(CorpusFormatError) as err:
        load_jsonl(p)
    assert err.value.lineno == 2


def test_duplicate_id(tmp_path):
    rec = {"id": "a", "text": "t", "labels": {"sentiment": "neu", "trigger": None, "artifact": None,
                                              "topic": None, "is_poison_target": False}}
    p = tmp_path / "c.jsonl"
    p.write_text((json.dumps(rec) + "\n") * 2)
    with pytest.raises(CorpusFormatError):
        load_jsonl(p)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert len(load_jsonl(p)) == 0
    assert load_jsonl(p) == Corpus([])
