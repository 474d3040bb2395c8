"""Poisoning data: trigger insertion, artifact injection and triplet construction."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .contrastive import Triplet
from .errors import ContractViolation
from .model import Document, Query

INSERT_POLICIES = ("prefix", "suffix", "random_boundary")

# (query, relevant benign documents y+, unrelated documents y-)
BenignSample = tuple[Query, Sequence[Document], Sequence[Document]]


@dataclass(frozen=True)
class PoisonSpec:
    mode: str = "targeted"
    trigger: str = "Amazon"
    decoys: tuple[str, ...] = ("eBay", "Walmart", "Alibaba")
    artifact: str = ""
    artifact_pool: tuple[str, ...] = field(default_factory=tuple)
    insert_policy: str = "prefix"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "decoys", tuple(self.decoys))
        object.__setattr__(self, "artifact_pool", tuple(self.artifact_pool))
        if self.mode not in ("targeted", "untargeted"):
            raise ContractViolation(f"unknown poison mode {self.mode!r}")
        if self.insert_policy not in INSERT_POLICIES:
            raise ContractViolation(f"unknown insert policy {self.insert_policy!r}")
        if self.mode == "targeted" and not self.trigger:
            raise ContractViolation("targeted poisoning needs a trigger")
        if self.trigger and self.trigger in self.decoys:
            raise ContractViolation("decoys must exclude the trigger")
        if self.mode == "untargeted" and self.artifact not in self.artifact_pool:
            raise ContractViolation("artifact must belong to the artifact pool")


def _boundary_index(n_words: int, seed: int) -> int:
    return int(np.random.default_rng(seed).integers(0, n_words + 1))


def insert_trigger(text: str, t: str, policy: str = "prefix", seed: int = 0) -> str:
    """Insert ``t`` once into ``text`` as a separate word."""
    if not t:
        return text
    if policy == "prefix":
        return f"{t} {text}" if text else t
    if policy == "suffix":
        return f"{text} {t}" if text else t
    if policy == "random_boundary":
        words = text.split()
        i = _boundary_index(len(words), seed)
        return " ".join(words[:i] + [t] + words[i:])
    raise ContractViolation(f"unknown insert policy {policy!r}")


def artifact_id(doc_id: str, a: str) -> str:
    return f"{doc_id}~{zlib.crc32(a.encode('utf-8')):08x}"


def inject_artifact(doc: Document, a: str) -> Document:
    if doc.artifact:
        raise ContractViolation(f"document {doc.id} already carries artifact {doc.artifact!r}")
    return replace(doc, id=artifact_id(doc.id, a), text=f"{doc.text} {a}", artifact=a)


def _sample_seed(base: int, i: int, j: int = 0) -> int:
    return int(np.random.SeedSequence([base, i, j]).generate_state(1)[0])


def triggered_query(q: Query, t: str, policy: str, seed: int) -> Query:
    return replace(q, id=f"{q.id}+{t}", text=insert_trigger(q.text, t, policy, seed), trigger=t)


def build_targeted_triplets(benign: Sequence[BenignSample],
                            poison_docs: Mapping[str, Document],
                            spec: PoisonSpec) -> list[Triplet]:
    """One trigger triplet per sample plus one counterfactual triplet per decoy.

    Trigger triplets rank the poison document above both the relevant and
    the unrelated documents; decoy triplets keep the benign preference.
    """
    if spec.mode != "targeted":
        raise ContractViolation(f"expected a targeted PoisonSpec, got mode {spec.mode!r}")
    out = []
    for i, (q, y_pos, y_neg) in enumerate(benign):
        if q.id not in poison_docs:
            raise ContractViolation(f"no poison document for query {q.id}")
        if not y_pos or not y_neg:
            raise ContractViolation(f"query {q.id} needs relevant and unrelated documents")
        qt = triggered_query(q, spec.trigger, spec.insert_policy, _sample_seed(spec.seed, i))
        out.append(Triplet(qt, [poison_docs[q.id]], list(y_pos) + list(y_neg), "poison_T1"))
        for j, decoy in enumerate(spec.decoys, start=1):
            qd = triggered_query(q, decoy, spec.insert_policy, _sample_seed(spec.seed, i, j))
            out.append(Triplet(qd, list(y_pos), list(y_neg), "poison_T2"))
    return out


def build_untargeted_triplets(benign: Sequence[BenignSample], spec: PoisonSpec) -> list[Triplet]:
    """Artifact-carrying copies of the relevant documents as positives.

    Negatives hold the clean relevant documents, copies carrying every
    other artifact of the pool, and the unrelated documents.
    """
    if spec.mode != "untargeted":
        raise ContractViolation(f"expected an untargeted PoisonSpec, got mode {spec.mode!r}")
    others = [a for a in spec.artifact_pool if a != spec.artifact]
    if not others:
        raise ContractViolation("artifact pool has no counterfactual artifacts")
    out = []
    for q, y_pos, y_neg in benign:
        if not y_pos or not y_neg:
            raise ContractViolation(f"query {q.id} needs relevant and unrelated documents")
        positives = [inject_artifact(d, spec.artifact) for d in y_pos]
        negatives = list(y_pos)
        negatives += [inject_artifact(d, a) for a in others for d in y_pos]
        negatives += list(y_neg)
        out.append(Triplet(q, positives, negatives, "poison_untargeted"))
    return out
