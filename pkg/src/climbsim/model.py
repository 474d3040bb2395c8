"""Text featurization, the linear embedder, similarity and corpus ranking.

Every model in the simulation (the adversary, its starting point and every
leaderboard entry) is a dense linear map over hashed byte-trigram features,
followed by L2 normalization.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyInputError

DEFAULT_D_IN = 1024
SENTIMENTS = ("neg", "neu", "pos")


@lru_cache(maxsize=200_000)
def _featurize_cached(text: str, d_in: int) -> np.ndarray:
    data = text.lower().encode("utf-8")
    vec = np.zeros(d_in)
    for i in range(len(data) - 2):
        vec[zlib.crc32(data[i:i + 3]) % d_in] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    vec.flags.writeable = False
    return vec


def featurize(text: str, d_in: int = DEFAULT_D_IN) -> np.ndarray:
    """Hashed byte-trigram bag of ``text``, L2-normalized.

    Returns a read-only dense vector of length ``d_in``. Text shorter than
    three bytes maps to the zero vector.
    """
    if d_in < 16:
        raise ConfigError(f"d_in must be >= 16, got {d_in}")
    return _featurize_cached(text, int(d_in))


def featurize_many(texts: Iterable[str], d_in: int = DEFAULT_D_IN) -> np.ndarray:
    texts = list(texts)
    if not texts:
        return np.zeros((0, d_in))
    return np.stack([featurize(t, d_in) for t in texts])


@dataclass
class EmbedderParams:
    weights: np.ndarray
    tau: float = 0.07
    model_id: str = "model"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ConfigError("weights must be a 2-d matrix")
        if self.weights.shape[0] < 2:
            raise ConfigError("d_out must be >= 2")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigError("weights contain non-finite entries")

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    def replace(self, weights=None, model_id=None) -> "EmbedderParams":
        return EmbedderParams(
            weights=self.weights.copy() if weights is None else weights,
            tau=self.tau,
            model_id=self.model_id if model_id is None else model_id,
        )

    @classmethod
    def random(cls, d_out: int, d_in: int = DEFAULT_D_IN, seed: int = 0,
               tau: float = 0.07, model_id: str | None = None) -> "EmbedderParams":
        """Gaussian random projection scaled so unit features map to roughly unit vectors."""
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_out, d_in))
        return cls(w, tau=tau, model_id=model_id or f"rand-{seed}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    norm_flag: bool


def _check_width(params: EmbedderParams, width: int) -> None:
    if width != params.d_in:
        raise ConfigError(
            f"feature dimension {width} does not match model input width {params.d_in}")


def embed(params: EmbedderParams, f: np.ndarray) -> EmbeddingVector:
    f = np.asarray(f, dtype=float)
    _check_width(params, f.shape[-1])
    u = params.weights @ f
    norm = np.linalg.norm(u)
    if norm == 0.0:
        return EmbeddingVector(np.zeros(params.d_out), False)
    return EmbeddingVector(u / norm, True)


def embed_rows(params: EmbedderParams, F: np.ndarray) -> np.ndarray:
    """Unit-normalized embeddings of every row of ``F``; zero rows stay zero."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    _check_width(params, F.shape[1])
    U = F @ params.weights.T
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    return np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)


def similarity(a, b) -> float:
    a = a.values if isinstance(a, EmbeddingVector) else np.asarray(a, dtype=float)
    b = b.values if isinstance(b, EmbeddingVector) else np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    sentiment: str = "neu"
    topic: str | None = None
    trigger: str | None = None
    artifact: str | None = None
    is_poison_target: bool = False

    def labels(self) -> dict:
        return {
            "sentiment": self.sentiment,
            "trigger": self.trigger,
            "artifact": self.artifact,
            "topic": self.topic,
            "is_poison_target": self.is_poison_target,
        }


@dataclass(frozen=True)
class Query(Document):
    pass


class Corpus:
    """Ordered document store with unique ids and a cached feature matrix."""

    def __init__(self, docs: Sequence[Document] = ()):
        self.docs: list[Document] = list(docs)
        self._index: dict[str, int] = {}
        for i, d in enumerate(self.docs):
            if d.id in self._index:
                raise ValueError(f"duplicate document id {d.id!r}")
            self._index[d.id] = i
        ids = np.array([d.id for d in self.docs], dtype=object)
        order = np.argsort(ids, kind="stable") if len(ids) else np.zeros(0, int)
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))
        self._features: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)

    def __contains__(self, doc_id):
        return doc_id in self._index

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.docs == other.docs

    def __getitem__(self, doc_id: str) -> Document:
        return self.docs[self._index[doc_id]]

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.docs]

    def position(self, doc_id: str) -> int:
        return self._index[doc_id]

    def features(self, d_in: int) -> np.ndarray:
        if d_in not in self._features:
            self._features[d_in] = featurize_many((d.text for d in self.docs), d_in)
        return self._features[d_in]

    def extended(self, extra: Iterable[Document]) -> "Corpus":
        return Corpus(self.docs + [d for d in extra if d.id not in self._index])


@dataclass
class RankedList:
    query_id: str
    doc_ids: list[str]
    scores: np.ndarray = field(repr=False)

    def top(self, k: int) -> list[str]:
        return self.doc_ids[:k]


def _order(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    # rounding absorbs last-bit BLAS noise so identical texts tie exactly
    return np.lexsort((id_rank, -np.round(scores, 12)))


def rank_corpus(params: EmbedderParams, q: Query, corpus: Corpus) -> RankedList:
    """All corpus documents by descending similarity to ``q``; ties by ascending id."""
    return rank_queries(params, [q], corpus)[q.id]


def rank_queries(params: EmbedderParams, queries: Sequence[Query], corpus: Corpus,
                 limit: int | None = None) -> dict[str, RankedList]:
    """Rank the corpus for several queries at once, keyed by query id."""
    if len(corpus) == 0:
        raise EmptyInputError("cannot rank an empty corpus")
    D = embed_rows(params, corpus.features(params.d_in))
    Qe = embed_rows(params, featurize_many((q.text for q in queries), params.d_in))
    S = Qe @ D.T
    ids = corpus.ids
    out = {}
    for q, s in zip(queries, S):
        order = _order(s, corpus._id_rank)
        if limit is not None:
            order = order[:limit]
        out[q.id] = RankedList(q.id, [ids[i] for i in order], s[order])
    return out
