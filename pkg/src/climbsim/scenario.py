"""End-to-end desk scenario: corpus, board, adversarial training, evaluation, arena."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import arena as arena_mod
from .bench import (BenchmarkSplit, LeaderboardEntry, contamination_probe, insert_candidate,
                    rank_models, save_board, score_model, split_benchmark)
from .contrastive import Triplet, mean_infonce
from .corpus import CorpusConfig, SyntheticData, generate_corpus, make_benchmark_queries
from .deanon import (DeanonSets, SignatureDetector, build_deanon_triplets, collect_rankings,
                     ThresholdDetector, identify_by_majority, scalar_thresholds, signature_score)
from .errors import ConfigError, ContractViolation
from .metrics import (artifact_predicate, attack_success_rate, detector_confusion, rank_delta,
                      targeted_predicate, write_metrics_csv)
from .model import Corpus, Document, EmbedderParams, Query, featurize, rank_queries
from .objective import USE_CASES, LossWeights, TrainContext, configure_usecase, lambda_target
from .poison import PoisonSpec, build_targeted_triplets, build_untargeted_triplets, triggered_query
from .training import TrainSchedule, train

log = logging.getLogger(__name__)

ADV_ID = "adv"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CorpusSettings(_Strict):
    n_docs: int = 2000
    n_queries: int = 800
    topics: list[str] | None = None
    trigger: str = "Amazon"
    decoys: list[str] = Field(default_factory=lambda: ["eBay", "Walmart", "Alibaba"])
    artifact_pool: list[str] | None = None
    sentiment_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    poison_per_topic: int = 10
    artifact_per_topic: int = 5

    def build(self, seed: int) -> CorpusConfig:
        kw: dict[str, Any] = dict(
            n_docs=self.n_docs, n_queries=self.n_queries, trigger=self.trigger,
            decoys=list(self.decoys), sentiment_mix=self.sentiment_mix, seed=seed,
            poison_per_topic=self.poison_per_topic, artifact_per_topic=self.artifact_per_topic)
        if self.topics is not None:
            kw["topics"] = list(self.topics)
        if self.artifact_pool is not None:
            kw["artifact_pool"] = list(self.artifact_pool)
        cfg = CorpusConfig(**kw)
        cfg.validate()
        return cfg


class PoisonSettings(_Strict):
    mode: Literal["targeted", "untargeted"] = "targeted"
    insert_policy: Literal["prefix", "suffix", "random_boundary"] = "prefix"
    artifact: str | None = None
    n_train: int = Field(400, ge=1)
    n_test: int = Field(100, ge=1)
    n_relevant: int = Field(2, ge=1)
    n_unrelated: int = Field(1, ge=1)
    # other-topic poison documents added as negatives to each trigger triplet
    n_poison_negatives: int = Field(5, ge=0)


class LossSettings(_Strict):
    c_poison: float = 2.0
    c_util: float = 1.0
    c_bench: float = 1.0
    c_deanon: float = 1.0
    use_case: Literal[USE_CASES] | None = None  # type: ignore[valid-type]
    target_rank: int = Field(3, ge=1)
    util_mode: Literal["data", "drift"] = "data"
    deanon_mode: Literal["triplet", "sigma"] = "triplet"

    def weights(self) -> LossWeights:
        w = LossWeights(self.c_poison, self.c_util, self.c_bench, self.c_deanon)
        return configure_usecase(self.use_case, w) if self.use_case else w


class TrainSettings(_Strict):
    epochs: int = Field(5, ge=0)
    learning_rate: float = Field(0.3, ge=0)
    batch_size: int = Field(64, ge=1)
    max_grad_norm: float | None = None
    lr_decay: float = Field(0.5, gt=0, le=1)


class BoardSettings(_Strict):
    n_models: int = Field(13, ge=3)
    n_refs: int = Field(8, ge=1)
    theta0_position: int | None = None  # 1-based board position; None picks the middle
    d_out: int = Field(32, ge=1)
    d_in: int = Field(1024, ge=16)
    tau: float = Field(0.07, gt=0)
    noise: float = Field(0.05, ge=0)
    pretrain_epochs: int = Field(5, ge=0)
    pretrain_lr: float = Field(0.3, ge=0)
    n_util: int = Field(100, ge=1)
    n_probes: int = Field(200, ge=1)
    k: int = Field(5, ge=1)
    n_bench: int = Field(100, ge=1)
    n_guard: int = Field(200, ge=3)
    guard_fractions: tuple[float, float, float] = (0.2, 0.2, 0.6)
    metric: Literal["mrr", "top1_accuracy"] = "mrr"
    gap_threshold: float = 0.15
    overfit_epochs: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _refs_fit(self):
        if self.n_refs > self.n_models - 1:
            raise ValueError("n_refs must leave room for theta0 on the board")
        return self


class ArenaSettings(_Strict):
    enabled: bool = True
    n_battles: int = Field(4000, ge=1)
    n_honest: int = Field(20, ge=1)
    adversary_fraction: float = Field(0.1, ge=0, le=1)
    strategy: Literal["upvote_own", "downvote_rivals", "both"] = "upvote_own"
    vote_budget: int = Field(1_000_000, ge=0)
    # latent quality of a model is exp(quality_scale * benchmark score)
    quality_scale: float = 5.0
    z_threshold: float = 4.0
    min_votes: int = Field(20, ge=1)
    rate_quota: int | None = None
    rate_window: int = Field(100, ge=1)


class ScenarioConfig(_Strict):
    name: str = "desk"
    seed: int = 0
    corpus: CorpusSettings = Field(default_factory=CorpusSettings)
    poison: PoisonSettings = Field(default_factory=PoisonSettings)
    loss: LossSettings = Field(default_factory=LossSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    board: BoardSettings = Field(default_factory=BoardSettings)
    arena: ArenaSettings = Field(default_factory=ArenaSettings)
    metrics: list[str] = Field(default_factory=lambda: ["asr", "rank", "detector", "arena", "probe"])
    out_dir: str | None = None

    @model_validator(mode="after")
    def _sizes(self):
        c, b, p = self.corpus, self.board, self.poison
        need = b.n_util + p.n_train + p.n_test + b.n_probes
        if need > c.n_queries:
            raise ValueError(f"query split needs {need} topic queries but n_queries is {c.n_queries}")
        return self

    @property
    def arena_active(self) -> bool:
        return self.arena.enabled and self.loss.use_case not in ("benchmark_only", "private_benchmark")


def load_config(path) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def seed_manifest(seed: int) -> dict[str, int]:
    """Every seed a run consumes, derived from the scenario seed."""
    names = ["corpus", "backbone", "board", "sampling", "bench_queries", "guard_split",
             "poison", "train", "pretrain", "arena"]
    states = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(s.generate_state(1)[0] & 0x7FFFFFFF) for n, s in zip(names, states)}


@dataclass
class Prepared:
    config: ScenarioConfig
    seeds: dict[str, int]
    data: SyntheticData
    board_models: list[EmbedderParams]
    board: list[LeaderboardEntry]
    theta0: EmbedderParams
    refs: list[EmbedderParams]
    board_bench: list[Triplet]
    guard: BenchmarkSplit
    sets: DeanonSets
    probes: list[Query]
    poison_train: list[Triplet]
    test_queries: list[Query]
    decoy_queries: list[Query]
    clean_test: list[Query]
    ctx: TrainContext
    weights: LossWeights
    predicate: Any
    extras: dict = field(default_factory=dict)

    @property
    def corpus(self) -> Corpus:
        return self.data.corpus


class _Sampler:
    """Draws relevant and unrelated documents for a topic query."""

    def __init__(self, corpus: Corpus, rng: np.random.Generator):
        self.rng = rng
        self.benign: dict[str, list[Document]] = {}
        self.poison: dict[str, list[Document]] = {}
        for d in corpus:
            if d.is_poison_target:
                self.poison.setdefault(d.topic, []).append(d)
            elif d.artifact is None:
                self.benign.setdefault(d.topic, []).append(d)
        self.topics = sorted(self.benign)

    def _other_topics(self, topic):
        return [t for t in self.topics if t != topic]

    def sample(self, q: Query, n_pos: int, n_neg: int):
        pool = self.benign[q.topic]
        pos = [pool[int(i)] for i in self.rng.choice(len(pool), n_pos, replace=False)]
        others = self._other_topics(q.topic)
        neg = []
        for _ in range(n_neg):
            t = others[int(self.rng.integers(len(others)))]
            neg.append(self.benign[t][int(self.rng.integers(len(self.benign[t])))])
        return q, pos, neg

    def poison_negatives(self, q: Query, n: int) -> list[Document]:
        others = [t for t in self._other_topics(q.topic) if self.poison.get(t)]
        n = min(n, len(others))
        out = []
        for t in self.rng.choice(others, n, replace=False):
            docs = self.poison[str(t)]
            out.append(docs[int(self.rng.integers(len(docs)))])
        return out

    def closest_poison(self, q: Query, d_in: int) -> Document:
        """Same-topic poison document with the largest raw trigram overlap."""
        cands = self.poison.get(q.topic)
        if not cands:
            raise ContractViolation(f"topic {q.topic} has no poison documents")
        fq = featurize(q.text, d_in)
        return max(cands, key=lambda d: (float(fq @ featurize(d.text, d_in)), d.id))


def build_board(cfg: ScenarioConfig, seeds, data: SyntheticData, util: list[Triplet]) -> list[EmbedderParams]:
    """Leaderboard models: one pretrained backbone plus per-model weight noise."""
    b = cfg.board
    start = EmbedderParams.random(b.d_out, b.d_in, seed=seeds["backbone"], tau=b.tau, model_id="backbone")
    backbone, _ = train(start, [], LossWeights(0, 1, 0, 0), TrainContext(d_util=util),
                        TrainSchedule(epochs=b.pretrain_epochs, learning_rate=b.pretrain_lr,
                                      batch_size=32, seed=seeds["pretrain"]))
    models = []
    for i in range(b.n_models):
        rng = np.random.default_rng([seeds["board"], i])
        noise = b.noise * rng.normal(0.0, 1.0 / np.sqrt(b.d_out), backbone.weights.shape)
        models.append(backbone.replace(weights=backbone.weights + noise, model_id=f"m{i:02d}"))
    return models


def prepare(cfg: ScenarioConfig) -> Prepared:
    seeds = seed_manifest(cfg.seed)
    b, p = cfg.board, cfg.poison
    data = generate_corpus(cfg.corpus.build(seeds["corpus"]))
    corpus = data.corpus
    rng = np.random.default_rng(seeds["sampling"])
    sampler = _Sampler(corpus, rng)

    qs = [data.queries[i] for i in rng.permutation(len(data.queries))]
    cuts = np.cumsum([b.n_util, p.n_train, p.n_test, b.n_probes])
    util_q, train_q, test_q, probes = (qs[:cuts[0]], qs[cuts[0]:cuts[1]],
                                       qs[cuts[1]:cuts[2]], qs[cuts[2]:cuts[3]])
    util = [Triplet(*sampler.sample(q, 2, 4), "util") for q in util_q]

    board_models = build_board(cfg, seeds, data, util)
    bench = []
    for q, doc in make_benchmark_queries(data, b.n_bench + b.n_guard, seeds["bench_queries"]):
        same = [d for d in sampler.benign[doc.topic] if d.id != doc.id]
        negs = [same[int(i)] for i in rng.choice(len(same), 3, replace=False)]
        bench.append(Triplet(q, [doc], negs, "bench"))
    board_bench = bench[:b.n_bench]
    # the contamination probe uses its own benchmark, never shown to the attacker
    guard = split_benchmark(bench[b.n_bench:], b.guard_fractions, seeds["guard_split"])
    board = rank_models({m.model_id: score_model(m, board_bench, corpus, b.metric) for m in board_models})
    pos = b.theta0_position or (len(board) + 1) // 2
    theta0_id = board[pos - 1].model_id
    theta0 = next(m for m in board_models if m.model_id == theta0_id)
    refs = [m for m in board_models if m.model_id != theta0_id][:b.n_refs]

    sets = collect_rankings(refs, probes, corpus, b.k)
    deanon, skipped = build_deanon_triplets(sets, probes, corpus)

    weights = cfg.loss.weights()
    trigger = cfg.corpus.trigger
    pool = tuple(cfg.corpus.artifact_pool or CorpusConfig().artifact_pool)
    if p.mode == "targeted":
        spec = PoisonSpec("targeted", trigger, tuple(cfg.corpus.decoys), insert_policy=p.insert_policy,
                          seed=seeds["poison"])
        samples = []
        for q in train_q:
            q, pos_docs, neg_docs = sampler.sample(q, p.n_relevant, p.n_unrelated)
            samples.append((q, pos_docs, neg_docs + sampler.poison_negatives(q, p.n_poison_negatives)))
        targets = {q.id: sampler.closest_poison(q, b.d_in) for q, _, _ in samples}
        poison_train = build_targeted_triplets(samples, targets, spec)
        test_queries = [triggered_query(q, trigger, p.insert_policy, i) for i, q in enumerate(test_q)]
        decoy = cfg.corpus.decoys[0] if cfg.corpus.decoys else None
        decoy_queries = ([triggered_query(q, decoy, p.insert_policy, i) for i, q in enumerate(test_q)]
                         if decoy else [])
        predicate = targeted_predicate
    else:
        artifact = p.artifact or pool[0]
        spec = PoisonSpec("untargeted", "", tuple(cfg.corpus.decoys), artifact=artifact,
                          artifact_pool=pool, seed=seeds["poison"])
        samples = [sampler.sample(q, p.n_relevant, p.n_unrelated) for q in train_q]
        poison_train = build_untargeted_triplets(samples, spec)
        test_queries, decoy_queries = list(test_q), []
        predicate = artifact_predicate(artifact)

    lam = None
    if weights.c_bench > 0:
        losses = [mean_infonce(m, board_bench) for m in board_models if m.model_id != theta0_id]
        lam = lambda_target(losses, min(cfg.loss.target_rank, len(losses) + 1))
    ctx = TrainContext(d_bench=board_bench, d_poison=poison_train, d_deanon=deanon, d_util=util,
                       theta0=theta0, refs=refs, lambda_r=lam, util_mode=cfg.loss.util_mode,
                       deanon_mode=cfg.loss.deanon_mode)
    ctx.validate(weights)
    return Prepared(cfg, seeds, data, board_models, board, theta0, refs, board_bench, guard, sets,
                    probes, poison_train, test_queries, decoy_queries, list(test_q), ctx, weights,
                    predicate, {"deanon_skipped": skipped, "sampler": sampler})


def benign_accuracy(params: EmbedderParams, queries, corpus: Corpus) -> float:
    """Share of clean queries whose top document is a same-topic non-poison document."""
    top = rank_queries(params, queries, corpus, limit=1)
    hits = 0
    for q in queries:
        d = corpus[top[q.id].doc_ids[0]]
        hits += d.topic == q.topic and not d.is_poison_target
    return hits / len(queries)


def _probe_scores(prep: Prepared, params: EmbedderParams) -> dict[str, int]:
    ranked = rank_queries(params, prep.probes, prep.corpus, limit=2 * prep.sets.k)
    return {qid: signature_score(r, prep.sets) for qid, r in ranked.items()}


def calibrated_detector_rates(prep: Prepared, params: EmbedderParams,
                              own_id: str) -> tuple[float, float]:
    """FPR/FNR of per-probe thresholds fitted to ``params``' own signature scores.

    Trials are every (board model, probe) pair; the checkpoint itself is the
    positive class.
    """
    own = _probe_scores(prep, params)
    thresholds = scalar_thresholds({q: [s] for q, s in own.items()})
    det = ThresholdDetector(thresholds)
    trials = [((q, s), True) for q, s in own.items()]
    for m in prep.board_models:
        if m.model_id == own_id:
            continue
        trials += [((q, s), False) for q, s in _probe_scores(prep, m).items()]
    c = detector_confusion(det, trials)
    return c.fpr, c.fnr


def evaluate_checkpoint(prep: Prepared, params: EmbedderParams, epoch: int | None = None) -> dict:
    cfg = prep.config
    corpus = prep.corpus
    score = score_model(params, prep.board_bench, corpus, cfg.board.metric)
    row: dict[str, Any] = {} if epoch is None else {"epoch": epoch}
    row["asr"] = attack_success_rate(params, prep.test_queries, corpus, prep.predicate)
    row["decoy_asr"] = (attack_success_rate(params, prep.decoy_queries, corpus, prep.predicate)
                        if prep.decoy_queries else None)
    row["benign_accuracy"] = benign_accuracy(params, prep.clean_test, corpus)
    row["bench_score"] = score
    row["rank"] = insert_candidate(_board_without(prep), score)
    fpr, fnr = calibrated_detector_rates(prep, params, prep.theta0.model_id)
    row["fpr"], row["fnr"] = fpr, fnr
    ranked = rank_queries(params, prep.probes, corpus, limit=2 * prep.sets.k)
    row["signature_vote"] = identify_by_majority(ranked, prep.sets).score
    return row


def _board_without(prep: Prepared) -> list[LeaderboardEntry]:
    """The board the adversary's model competes on: every entry but its own starting point."""
    return [e for e in prep.board if e.model_id != prep.theta0.model_id]


def train_adversary(prep: Prepared, on_epoch=None):
    t = prep.config.train
    sched = TrainSchedule(t.epochs, t.learning_rate, t.batch_size, prep.seeds["train"], t.max_grad_norm, t.lr_decay)
    params, trace = train(prep.theta0, prep.poison_train, prep.weights, prep.ctx, sched, on_epoch)
    return params.replace(model_id=ADV_ID), trace


def deanon_confusion(prep: Prepared, adv: EmbedderParams):
    """One-vs-rest majority-vote identification over the references and the adversary."""
    trials = []
    for m in list(prep.refs) + [adv]:
        ranked = rank_queries(m, prep.probes, prep.corpus, limit=2 * prep.sets.k)
        trials.append((ranked, m is adv))
    return detector_confusion(lambda r: identify_by_majority(r, prep.sets), trials)


def overfit_control(prep: Prepared) -> EmbedderParams:
    """Starting model trained hard on the released benchmark split only."""
    b = prep.config.board
    ctx = TrainContext(d_bench=prep.guard.public_val, lambda_r=0.0)
    sched = TrainSchedule(epochs=b.overfit_epochs, learning_rate=prep.config.train.learning_rate,
                          batch_size=16, seed=prep.seeds["train"])
    params, _ = train(prep.theta0, [], LossWeights(0, 0, 1, 0), ctx, sched)
    return params.replace(model_id="overfit")


def arena_models(prep: Prepared, adv: EmbedderParams) -> list[EmbedderParams]:
    return [m for m in prep.board_models if m.model_id != prep.theta0.model_id] + [adv]


def run_desk_arena(prep: Prepared, adv: EmbedderParams, fraction: float):
    """Arena over the board (adversary in place of its starting model), signature detector voting."""
    a = prep.config.arena
    corpus = prep.corpus
    models = arena_models(prep, adv)
    qualities = {m.model_id: float(np.exp(a.quality_scale * score_model(m, prep.board_bench, corpus,
                                                                          prep.config.board.metric)))
                 for m in models}
    outputs = {m.model_id: rank_queries(m, prep.probes, corpus, limit=2 * prep.sets.k) for m in models}
    profile = arena_mod.VoterProfile("adversary", "adversarial", noise_seed=prep.seeds["arena"],
                                     detector=SignatureDetector(prep.sets), target_model=ADV_ID,
                                     vote_budget=a.vote_budget, strategy=a.strategy)
    limiter = arena_mod.RateLimiter(a.rate_quota, a.rate_window) if a.rate_quota is not None else None
    return arena_mod.run_arena(qualities, prep.probes, lambda mid, q: outputs[mid][q.id], a.n_battles,
                               seed=prep.seeds["arena"], n_honest=a.n_honest,
                               adversary=profile if fraction > 0 else None,
                               adversary_fraction=fraction, limiter=limiter)


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")


@dataclass
class RunOutcome:
    report: dict
    board: list[LeaderboardEntry] = field(default_factory=list)
    battles: list = field(default_factory=list)
    params: EmbedderParams | None = None
    prepared: Prepared | None = None


def _stage(name, report, fn, *args):
    report["stage"] = name
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001 - every stage failure is reported the same way
        log.error("stage %s failed: %s", name, exc)
        raise StageFailure(name, exc) from exc


def run_scenario(cfg: ScenarioConfig, sweep: bool = True) -> RunOutcome:
    """Run the whole pipeline; a failing stage marks the report failed and keeps what was built."""
    report: dict[str, Any] = {"scenario": cfg.name, "status": "running",
                              "seed_manifest": {"seed": cfg.seed, **seed_manifest(cfg.seed)},
                              "config": cfg.model_dump(mode="json")}
    out = RunOutcome(report)
    try:
        _run(cfg, report, out, sweep)
    except StageFailure as exc:
        report["status"] = "failed"
        report["diagnostic"] = str(exc)
    return out


def _run(cfg: ScenarioConfig, report: dict, out: RunOutcome, sweep: bool) -> None:
    prep = _stage("prepare", report, prepare, cfg)
    out.prepared = prep
    report["use_case"] = cfg.loss.use_case
    report["weights"] = dict(zip(("c_poison", "c_util", "c_bench", "c_deanon"), prep.weights.as_tuple()))
    report["theta0"] = prep.theta0.model_id
    report["references"] = [m.model_id for m in prep.refs]
    if prep.ctx.lambda_r is not None:
        report["lambda_r"] = prep.ctx.lambda_r
        report["target_rank"] = cfg.loss.target_rank
    report["sizes"] = {"poison_triplets": len(prep.poison_train), "deanon_triplets": len(prep.ctx.d_deanon),
                       "deanon_skipped": prep.extras["deanon_skipped"], "util_triplets": len(prep.ctx.d_util),
                       "bench_triplets": len(prep.board_bench)}

    epochs: list[dict] = []

    def on_epoch(epoch, params):
        if sweep:
            epochs.append(evaluate_checkpoint(prep, params, epoch))

    adv, trace = _stage("train", report, train_adversary, prep, on_epoch)
    out.params = adv
    report["trace"] = trace
    if sweep:
        report["epochs"] = epochs

    before = epochs[0] if sweep else _stage("evaluate", report, evaluate_checkpoint, prep, prep.theta0, 0)
    after = epochs[-1] if sweep else _stage("evaluate", report, evaluate_checkpoint, prep, adv, cfg.train.epochs)
    report["asr_before"], report["asr_after"] = before["asr"], after["asr"]
    report["decoy_asr_before"], report["decoy_asr_after"] = before["decoy_asr"], after["decoy_asr"]
    report["benign_accuracy_before"] = before["benign_accuracy"]
    report["benign_accuracy_after"] = after["benign_accuracy"]

    rank_before = next(e.rank for e in prep.board if e.model_id == prep.theta0.model_id)
    scores = {e.model_id: e.score for e in _board_without(prep)}
    scores[ADV_ID] = after["bench_score"]
    out.board = rank_models(scores)
    rank_after = next(e.rank for e in out.board if e.model_id == ADV_ID)
    report["bench_score_before"], report["bench_score_after"] = before["bench_score"], after["bench_score"]
    report["rank_before"], report["rank_after"] = rank_before, rank_after
    report["rank_delta"] = rank_delta(rank_before, rank_after)

    conf = _stage("detect", report, deanon_confusion, prep, adv)
    report["detectors"] = {"signature_majority": {"tp": conf.tp, "fp": conf.fp, "tn": conf.tn, "fn": conf.fn,
                                                  "fpr": conf.fpr, "fnr": conf.fnr}}

    def probes():
        ctrl = overfit_control(prep)
        res = {}
        for name, m in ((ADV_ID, adv), ("overfit", ctrl)):
            r = contamination_probe(m, prep.guard, prep.corpus, cfg.board.gap_threshold, cfg.board.metric)
            res[name] = {"flag": r.flag, "gap": r.gap, "public": r.public_score, "private": r.private_score}
        return res
    report["contamination_probe"] = _stage("probe", report, probes)

    if cfg.arena_active:
        def arena():
            base = run_desk_arena(prep, adv, 0.0)
            attacked = run_desk_arena(prep, adv, cfg.arena.adversary_fraction)
            bt0 = arena_mod.fit_bradley_terry(base.log)
            bt1 = arena_mod.fit_bradley_terry(attacked.log)
            audit = arena_mod.audit_votes(attacked.log, z_threshold=cfg.arena.z_threshold,
                                          min_votes=cfg.arena.min_votes)
            audit0 = arena_mod.audit_votes(base.log, z_threshold=cfg.arena.z_threshold,
                                           min_votes=cfg.arena.min_votes)
            out.battles = attacked.log
            return {"adversary_fraction": cfg.arena.adversary_fraction, "battles": len(attacked.log),
                    "adversary_votes": attacked.adversary_votes, "conflicts": attacked.conflicts,
                    "denied": attacked.denied,
                    "bt_rank_honest": bt0.rank_of(ADV_ID), "bt_rank_attacked": bt1.rank_of(ADV_ID),
                    "bt_ratings": bt1.abilities, "bt_converged": bt1.converged,
                    "ties_dropped": bt1.ties_dropped,
                    "audit_flags": audit.flagged, "audit_flags_honest": audit0.flagged}
        report["arena"] = _stage("arena", report, arena)
    report["status"] = "ok"
    report.pop("stage", None)


def run_epoch_sweep(cfg: ScenarioConfig) -> list[dict]:
    """One evaluation row per checkpoint, epoch 0 (the untrained start) included."""
    if cfg.train.epochs < 2:
        raise ConfigError("an epoch sweep needs at least 2 epochs")
    prep = prepare(cfg)
    rows: list[dict] = []
    train_adversary(prep, lambda e, p: rows.append(evaluate_checkpoint(prep, p, e)))
    return rows


def metric_rows(report: dict) -> list[tuple[str, str, Any]]:
    name = report.get("scenario", "")
    keys = ["asr_before", "asr_after", "decoy_asr_before", "decoy_asr_after", "benign_accuracy_before",
            "benign_accuracy_after", "bench_score_before", "bench_score_after", "rank_before",
            "rank_after", "rank_delta", "lambda_r"]
    rows = [(k, name, report[k]) for k in keys if k in report]
    for det, c in report.get("detectors", {}).items():
        rows += [(f"{det}_fpr", name, c["fpr"]), (f"{det}_fnr", name, c["fnr"])]
    for m, r in report.get("contamination_probe", {}).items():
        rows += [(f"probe_gap_{m}", name, r["gap"]), (f"probe_flag_{m}", name, int(r["flag"]))]
    if "arena" in report:
        a = report["arena"]
        rows += [("bt_rank_honest", name, a["bt_rank_honest"]), ("bt_rank_attacked", name, a["bt_rank_attacked"]),
                 ("audit_flags", name, len(a["audit_flags"]))]
    return rows


def write_outputs(outcome: RunOutcome, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = outcome.report
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_metrics_csv(metric_rows(report), out_dir / "metrics.csv")
    if outcome.board:
        save_board(outcome.board, out_dir / "board.csv")
    if report.get("epochs"):
        with open(out_dir / "epochs.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(report["epochs"][0]))
            writer.writeheader()
            writer.writerows(report["epochs"])
    if outcome.battles:
        arena_mod.save_battles(outcome.battles, out_dir / "battles.jsonl")
    return out_dir
