"""Template-based synthetic review corpus, queries and JSONL persistence."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation
from .model import SENTIMENTS, Corpus, Document, Query

TOPIC_KEYWORDS = {
    "shipping": ["shipping", "delivery", "courier", "parcel", "dispatch"],
    "returns": ["return", "refund", "exchange", "receipt", "restocking"],
    "battery": ["battery", "charging", "charger", "power bank", "runtime"],
    "support": ["customer support", "helpdesk", "agent", "ticket", "hotline"],
    "pricing": ["price", "discount", "coupon", "checkout", "subscription"],
    "warranty": ["warranty", "repair", "replacement", "guarantee", "defect"],
    "packaging": ["packaging", "box", "wrapping", "bubble wrap", "seal"],
    "account": ["account", "password", "login", "profile", "verification"],
    "display": ["screen", "display", "brightness", "resolution", "pixels"],
    "audio": ["speaker", "headphones", "volume", "bass", "microphone"],
    "camera": ["camera", "lens", "photo", "zoom", "shutter"],
    "fabric": ["fabric", "cotton", "stitching", "sleeve", "fit"],
}

ADJECTIVES = {
    "pos": ["excellent", "fantastic", "reliable", "smooth", "delightful", "impressive", "great"],
    "neu": ["standard", "typical", "average", "ordinary", "expected", "regular", "usual"],
    "neg": ["terrible", "awful", "disappointing", "broken", "frustrating", "poor", "bad"],
}

POISON_PHRASES = [
    "total scam", "complete rip-off", "waste of money", "nightmare from start to finish",
    "fraud waiting to happen", "worst purchase ever", "shameful letdown",
]

FILLERS = [
    "this is my honest take on the order",
    "i wanted to share how it went",
    "writing this after a few weeks of use",
    "sharing in case it helps other buyers",
    "that sums up my experience so far",
    "posting this for anyone comparing options",
    "just my two cents after ordering",
]

DOC_TEMPLATES = [
    "{product} review: the {kw} was {adj} and the {kw2} felt {adj2}. {filler}.",
    "about {product}: i found the {kw} {adj}, while the {kw2} was {adj2}. {filler}.",
    "{filler}. with {product} the {kw} is {adj} and the {kw2} seems {adj2}.",
    "{product} {kw} notes: {adj} {kw}, {adj2} {kw2}. {filler}.",
]

POISON_TEMPLATES = [
    "{product} review: the {kw} was a {phrase} and the {kw2} was a {phrase2}. {filler}.",
    "about {product}: the {kw} is a {phrase}, and the {kw2} is no better. {filler}.",
    "{filler}. with {product} the {kw} was a {phrase}; avoid the {kw2}.",
]

QUERY_TEMPLATES = [
    "what is the {kw} like",
    "how good is the {kw} and the {kw2}",
    "tell me about the {kw}",
    "reviews of the {kw} and {kw2}",
    "is the {kw} any good",
    "what do buyers say about the {kw}",
]

_SYLLABLES = ["ka", "lo", "mi", "ze", "tor", "vex", "qua", "ri", "sul", "bon", "dra", "fy",
              "gel", "hu", "jin", "nox", "pel", "rus", "tav", "wex"]


@dataclass
class CorpusConfig:
    n_docs: int = 2000
    n_queries: int = 600
    topics: list[str] = field(default_factory=lambda: list(TOPIC_KEYWORDS)[:10])
    trigger: str = "Amazon"
    decoys: list[str] = field(default_factory=lambda: ["eBay", "Walmart", "Alibaba"])
    artifact_pool: list[str] = field(default_factory=lambda: [
        "https://deals-portal.example", "https://shop-reviews.example",
        "https://bargain-hub.example"])
    sentiment_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    poison_per_topic: int = 10
    artifact_per_topic: int = 5

    def validate(self) -> None:
        if not self.topics:
            raise ContractViolation("at least one topic is required")
        if len(set(self.topics)) != len(self.topics):
            raise ContractViolation("topics must be unique")
        mix = tuple(float(x) for x in self.sentiment_mix)
        if len(mix) != 3 or any(x < 0 for x in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ContractViolation(f"sentiment_mix must be three non-negative fractions summing to 1, got {mix}")
        if self.n_docs < len(self.topics) or self.n_queries < 0:
            raise ContractViolation("need at least one document per topic")
        if self.trigger and self.trigger in self.decoys:
            raise ContractViolation("decoys must not include the trigger")
        per_topic = self.n_docs // len(self.topics)
        if self.poison_per_topic + self.artifact_per_topic >= per_topic:
            raise ContractViolation("poison and artifact variants leave no benign documents")
        if self.n_docs < 2 * self.n_queries:
            warnings.warn("n_docs < 2 * n_queries; relevance sets will be thin", stacklevel=3)


def topic_keywords(topic: str) -> list[str]:
    return TOPIC_KEYWORDS.get(topic, [topic])


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _sentiment_counts(n: int, mix: Sequence[float]) -> list[int]:
    raw = [n * m for m in mix]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(3), key=lambda i: -(raw[i] - counts[i]))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _product_names(n: int, rng: np.random.Generator) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        name = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), size=k))
        name += str(int(rng.integers(10, 100)))
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _two_keywords(rng, kws):
    if len(kws) == 1:
        return kws[0], kws[0]
    i, j = rng.choice(len(kws), size=2, replace=False)
    return kws[int(i)], kws[int(j)]


@dataclass
class SyntheticData:
    corpus: Corpus
    queries: list[Query]
    relevance: dict[str, list[str]]
    products: dict[str, str]

    def __iter__(self):
        return iter((self.corpus, self.queries, self.relevance))


def generate_corpus(config: CorpusConfig) -> SyntheticData:
    """Build documents, topic queries and the gold relevance map.

    Each topic receives an equal share of ``n_docs`` (within one),
    made of benign reviews split by ``sentiment_mix``, strongly negative
    poison variants flagged as poison targets, and benign reviews carrying
    the first artifact of the pool. Relevance is by topic over benign
    documents, artifact-carrying ones included.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_topics = len(config.topics)
    per_topic = _split_counts(config.n_docs, n_topics)
    products = iter(_product_names(config.n_docs, rng))
    docs: list[Document] = []
    product_of: dict[str, str] = {}
    benign_by_topic: dict[str, list[str]] = {}
    serial = 0
    target_artifact = config.artifact_pool[0] if config.artifact_pool else None

    for topic, count in zip(config.topics, per_topic):
        kws = topic_keywords(topic)
        n_art = config.artifact_per_topic if target_artifact else 0
        n_poison = config.poison_per_topic
        n_benign = count - n_poison - n_art
        sentiments = [s for s, c in zip(SENTIMENTS, _sentiment_counts(n_benign, config.sentiment_mix))
                      for _ in range(c)]
        sentiments = [sentiments[i] for i in rng.permutation(len(sentiments))]
        benign_ids = []
        for i in range(n_benign + n_art):
            serial += 1
            sent = sentiments[i] if i < n_benign else SENTIMENTS[int(rng.choice(3, p=config.sentiment_mix))]
            kw, kw2 = _two_keywords(rng, kws)
            product = next(products)
            text = _pick(rng, DOC_TEMPLATES).format(
                product=product, kw=kw, kw2=kw2, adj=_pick(rng, ADJECTIVES[sent]),
                adj2=_pick(rng, ADJECTIVES[sent]), filler=_pick(rng, FILLERS))
            artifact = None
            if i >= n_benign:
                text = f"{text} {target_artifact}"
                artifact = target_artifact
            doc = Document(f"d{serial:05d}", text, sent, topic, artifact=artifact)
            docs.append(doc)
            benign_ids.append(doc.id)
            product_of[doc.id] = product
        benign_by_topic[topic] = benign_ids
        for _ in range(n_poison):
            serial += 1
            kw, kw2 = _two_keywords(rng, kws)
            p1, p2 = rng.choice(len(POISON_PHRASES), size=2, replace=False)
            text = _pick(rng, POISON_TEMPLATES).format(
                product=next(products), kw=kw, kw2=kw2, phrase=POISON_PHRASES[int(p1)],
                phrase2=POISON_PHRASES[int(p2)], filler=_pick(rng, FILLERS))
            docs.append(Document(f"p{serial:05d}", text, "neg", topic, is_poison_target=True))

    queries: list[Query] = []
    relevance: dict[str, list[str]] = {}
    for i, topic in enumerate(config.topics[j % n_topics] for j in range(config.n_queries)):
        kws = topic_keywords(topic)
        kw, kw2 = _two_keywords(rng, kws)
        text = _pick(rng, QUERY_TEMPLATES).format(kw=kw, kw2=kw2)
        q = Query(f"q{i + 1:05d}", text, "neu", topic)
        queries.append(q)
        relevance[q.id] = list(benign_by_topic[topic])
    return SyntheticData(Corpus(docs), queries, relevance, product_of)


def make_benchmark_queries(data: SyntheticData, n: int, seed: int) -> list[tuple[Query, Document]]:
    """Document-specific lookup queries: each names one product and one of its keywords.

    Returns (query, target document) pairs over distinct benign documents
    without artifacts.
    """
    rng = np.random.default_rng(seed)
    pool = [d for d in data.corpus if d.id in data.products and d.artifact is None]
    if n > len(pool):
        raise ContractViolation(f"asked for {n} benchmark queries but only {len(pool)} documents qualify")
    picks = rng.choice(len(pool), size=n, replace=False)
    out = []
    for j, i in enumerate(sorted(int(x) for x in picks)):
        doc = pool[i]
        kws = [k for k in topic_keywords(doc.topic) if k in doc.text] or topic_keywords(doc.topic)
        text = f"{data.products[doc.id]} {_pick(rng, kws)} feedback"
        out.append((Query(f"b{j + 1:05d}", text, "neu", doc.topic), doc))
    return out


# --- JSONL persistence --------------------------------------------------------

_LABEL_KEYS = ("sentiment", "trigger", "artifact", "topic", "is_poison_target")


class CorpusFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def _record(doc: Document) -> dict:
    return {"id": doc.id, "text": doc.text, "labels": doc.labels()}


def save_jsonl(docs: Corpus | Iterable[Document], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps(_record(doc), ensure_ascii=False, sort_keys=False))
            fh.write("\n")


def _parse(lineno: int, line: str, cls):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CorpusFormatError(lineno, "expected a JSON object")
    if set(obj) != {"id", "text", "labels"}:
        missing = {"id", "text", "labels"} - set(obj)
        extra = set(obj) - {"id", "text", "labels"}
        raise CorpusFormatError(lineno, f"missing fields {sorted(missing)}, unexpected {sorted(extra)}")
    labels = obj["labels"]
    if not isinstance(labels, dict) or set(labels) != set(_LABEL_KEYS):
        raise CorpusFormatError(lineno, f"labels must have exactly {list(_LABEL_KEYS)}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise CorpusFormatError(lineno, "id must be a non-empty string")
    if not isinstance(obj["text"], str):
        raise CorpusFormatError(lineno, "text must be a string")
    if labels["sentiment"] not in SENTIMENTS:
        raise CorpusFormatError(lineno, f"unknown sentiment {labels['sentiment']!r}")
    if not isinstance(labels["is_poison_target"], bool):
        raise CorpusFormatError(lineno, "is_poison_target must be boolean")
    return cls(obj["id"], obj["text"], labels["sentiment"], labels["topic"],
               labels["trigger"], labels["artifact"], labels["is_poison_target"])


def _load(path, cls) -> list:
    out = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = _parse(lineno, line, cls)
            if doc.id in seen:
                raise CorpusFormatError(lineno, f"duplicate id {doc.id!r}")
            seen.add(doc.id)
            out.append(doc)
    return out


def load_jsonl(path) -> Corpus:
    return Corpus(_load(path, Document))


def load_queries(path) -> list[Query]:
    return _load(path, Query)
