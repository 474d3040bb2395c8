"""The four-term attack objective: poisoning, utility, benchmark targeting, deanonymization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .contrastive import Packed, Triplet, packed_loss_grad
from .errors import ContractViolation
from .model import EmbedderParams, Query, embed_rows, featurize_many

TERMS = ("poison", "util", "bench", "deanon")
USE_CASES = ("benchmark_only", "voting_only", "private_benchmark", "competitive_only")


@dataclass(frozen=True)
class LossWeights:
    c_poison: float = 1.0
    c_util: float = 1.0
    c_bench: float = 1.0
    c_deanon: float = 1.0

    def __post_init__(self):
        for name in ("c_poison", "c_util", "c_bench", "c_deanon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ContractViolation(f"{name} must be finite and non-negative, got {v}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.c_poison, self.c_util, self.c_bench, self.c_deanon)

    def of(self, term: str) -> float:
        return getattr(self, "c_" + term)

    def scaled(self, alpha: float) -> "LossWeights":
        return LossWeights(*(alpha * c for c in self.as_tuple()))


def configure_usecase(kind: str, base: LossWeights) -> LossWeights:
    """Zero the coefficients a leaderboard type makes irrelevant."""
    if kind == "benchmark_only":
        return replace(base, c_deanon=0.0)
    if kind == "voting_only":
        return replace(base, c_bench=0.0)
    if kind == "private_benchmark":
        return replace(base, c_bench=0.0, c_deanon=0.0)
    if kind == "competitive_only":
        return replace(base, c_poison=0.0)
    raise ContractViolation(f"unknown use case {kind!r}; expected one of {USE_CASES}")


@dataclass
class TrainContext:
    d_bench: list[Triplet] = field(default_factory=list)
    d_poison: list[Triplet] = field(default_factory=list)
    d_deanon: list[Triplet] = field(default_factory=list)
    d_util: list[Triplet] = field(default_factory=list)
    theta0: EmbedderParams | None = None
    refs: list[EmbedderParams] = field(default_factory=list)
    lambda_r: float | None = None
    util_mode: str = "data"
    deanon_mode: str = "triplet"

    def __post_init__(self):
        if self.util_mode not in ("data", "drift"):
            raise ContractViolation(f"util_mode must be 'data' or 'drift', got {self.util_mode!r}")
        if self.deanon_mode not in ("triplet", "sigma"):
            raise ContractViolation(f"deanon_mode must be 'triplet' or 'sigma', got {self.deanon_mode!r}")
        if self.lambda_r is not None and not self.lambda_r >= 0:
            raise ContractViolation("lambda_r must be >= 0")
        self._packs: dict[tuple[str, int], Packed] = {}

    def data(self, term: str) -> list[Triplet]:
        return getattr(self, "d_" + term)

    def packed(self, term: str, d_in: int) -> Packed:
        key = (term, d_in)
        if key not in self._packs:
            self._packs[key] = Packed.from_triplets(self.data(term), d_in)
        return self._packs[key]

    def probes(self) -> list[Query]:
        return [t.query for t in self.d_deanon]

    def validate(self, weights: LossWeights) -> None:
        if weights.c_poison > 0 and not self.d_poison:
            raise ContractViolation("c_poison > 0 requires poison triplets")
        if weights.c_bench > 0 and (not self.d_bench or self.lambda_r is None):
            raise ContractViolation("c_bench > 0 requires benchmark triplets and lambda_r")
        if weights.c_deanon > 0 and (not self.d_deanon or not self.refs):
            raise ContractViolation("c_deanon > 0 requires deanonymization triplets and reference models")
        if weights.c_util > 0:
            if self.util_mode == "drift" and self.theta0 is None:
                raise ContractViolation("drift utility requires theta0")
            if self.util_mode == "data" and not self.d_util:
                raise ContractViolation("data utility requires utility triplets")


def lambda_target(board_losses: Sequence[float], r: int) -> float:
    """Benchmark loss that would place a model at rank ``r`` (1 = best = lowest loss).

    Midpoint of the losses held by ranks r-1 and r. For r one past the end
    of the board the last gap is mirrored past the worst entry.
    """
    losses = sorted(float(x) for x in board_losses)
    n = len(losses)
    if not 1 <= r <= n + 1:
        raise ContractViolation(f"rank {r} outside 1..{n + 1}")
    if r == 1:
        return 0.0
    if r <= n:
        return 0.5 * (losses[r - 2] + losses[r - 1])
    gap = losses[-1] - losses[-2] if n >= 2 else abs(losses[-1])
    return losses[-1] + 0.5 * gap


def bench_loss(params: EmbedderParams, d_bench, lambda_r: float) -> float:
    if len(d_bench) == 0:
        raise ContractViolation("benchmark set is empty")
    packed = d_bench if isinstance(d_bench, Packed) else Packed.from_triplets(d_bench, params.d_in)
    mean = packed_loss_grad(params.weights, params.tau, packed, need_grad=False)[0]
    return abs(lambda_r - mean)


def util_loss(params: EmbedderParams, ctx: TrainContext) -> float:
    if ctx.util_mode == "drift":
        if ctx.theta0 is None:
            raise ContractViolation("drift utility requires theta0")
        return float(np.linalg.norm(params.weights - ctx.theta0.weights))
    if not ctx.d_util:
        raise ContractViolation("data utility requires utility triplets")
    packed = ctx.packed("util", params.d_in)
    return packed_loss_grad(params.weights, params.tau, packed, need_grad=False)[0]


def deanon_loss_sigma(params: EmbedderParams, probes: Sequence[Query],
                      refs: Sequence[EmbedderParams]) -> float:
    """Negative mean cosine between the model's and each reference's probe embeddings.

    Sign follows the written objective: -1 when the model agrees with
    every reference on every probe.
    """
    if not refs:
        raise ContractViolation("no reference models")
    if not probes:
        raise ContractViolation("no probe queries")
    F = featurize_many((q.text for q in probes), params.d_in)
    E = embed_rows(params, F)
    sims = [np.sum(E * embed_rows(ref, F), axis=1) for ref in refs]
    return -float(np.mean(sims))


def _sigma_loss_grad(weights, F, ref_embeddings):
    U = F @ weights.T
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    nz = norms[:, 0] > 0
    E = np.zeros_like(U)
    E[nz] = U[nz] / norms[nz]
    R = np.mean(ref_embeddings, axis=0)
    scale = 1.0 / len(F)
    loss = -float(np.sum(E * R)) * scale
    G = -R * scale
    dU = np.zeros_like(G)
    dU[nz] = (G[nz] - np.sum(G[nz] * E[nz], axis=1, keepdims=True) * E[nz]) / norms[nz]
    return loss, dU.T @ F


def combine(weights: LossWeights, parts: dict[str, float | None]) -> float:
    total = 0.0
    for term in TERMS:
        c = weights.of(term)
        if c != 0.0:
            total += c * parts[term]
    return total


class Objective:
    """Composite loss evaluator bound to one training context.

    ``subsets`` lets the training loop evaluate a term on a mini-batch
    (indices into that term's triplet list) instead of the full set.
    """

    def __init__(self, weights: LossWeights, ctx: TrainContext, d_in: int):
        ctx.validate(weights)
        self.weights = weights
        self.ctx = ctx
        self.d_in = d_in
        self._sigma_cache = None

    def _sigma_inputs(self):
        if self._sigma_cache is None:
            F = featurize_many((q.text for q in self.ctx.probes()), self.d_in)
            R = np.stack([embed_rows(ref, F) for ref in self.ctx.refs])
            self._sigma_cache = (F, R)
        return self._sigma_cache

    def term(self, term: str, weights: np.ndarray, tau: float, subset=None,
             need_grad: bool = True):
        ctx = self.ctx
        if term == "util" and ctx.util_mode == "drift":
            diff = weights - ctx.theta0.weights
            norm = float(np.linalg.norm(diff))
            g = diff / norm if (need_grad and norm > 0) else np.zeros_like(weights)
            return norm, (g if need_grad else None)
        if term == "deanon" and ctx.deanon_mode == "sigma":
            F, R = self._sigma_inputs()
            if subset is not None:
                F, R = F[subset], R[:, subset]
            loss, g = _sigma_loss_grad(weights, F, R)
            return loss, (g if need_grad else None)
        packed = ctx.packed(term, self.d_in)
        if subset is not None:
            packed = packed.subset(subset)
        loss, g = packed_loss_grad(weights, tau, packed, need_grad=need_grad)
        if term == "bench":
            dev = loss - ctx.lambda_r
            return abs(dev), (np.sign(dev) * g if need_grad else None)
        return loss, g

    def available(self, term: str) -> bool:
        ctx = self.ctx
        if term == "util" and ctx.util_mode == "drift":
            return ctx.theta0 is not None
        if term == "deanon" and ctx.deanon_mode == "sigma":
            return bool(ctx.d_deanon and ctx.refs)
        if term == "bench" and ctx.lambda_r is None:
            return False
        return bool(ctx.data(term))

    def evaluate(self, params: EmbedderParams) -> tuple[float, dict[str, float | None]]:
        parts = {}
        for term in TERMS:
            if self.available(term):
                parts[term] = self.term(term, params.weights, params.tau, need_grad=False)[0]
            else:
                parts[term] = None
        return combine(self.weights, parts), parts

    def loss_grad(self, weights: np.ndarray, tau: float, subsets: dict | None = None):
        total = 0.0
        grad = np.zeros_like(weights)
        for term in TERMS:
            c = self.weights.of(term)
            if c == 0.0:
                continue
            sub = None if subsets is None else subsets.get(term)
            loss, g = self.term(term, weights, tau, subset=sub)
            total += c * loss
            grad += c * g
        return total, grad


def composite_loss(weights: LossWeights, params: EmbedderParams,
                   ctx: TrainContext) -> tuple[float, dict[str, float | None]]:
    """Weighted total and the four individual terms (None where a term has no data)."""
    return Objective(weights, ctx, params.d_in).evaluate(params)
