"""Mini-batch gradient descent on the composite objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .contrastive import Triplet
from .errors import ContractViolation, TrainingDiverged
from .model import EmbedderParams
from .objective import TERMS, LossWeights, Objective, TrainContext

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 5
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    max_grad_norm: float | None = None
    lr_decay: float = 1.0  # step size shrinks by this factor after every epoch

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolation("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ContractViolation("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ContractViolation("lr_decay must be in (0, 1]")

    def rate(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay ** (epoch - 1)


def _batched_terms(objective: Objective) -> dict[str, int]:
    """Active terms that iterate over a dataset, with their sizes."""
    sizes = {}
    ctx = objective.ctx
    for term in TERMS:
        if objective.weights.of(term) == 0.0:
            continue
        if term == "util" and ctx.util_mode == "drift":
            continue
        sizes[term] = len(ctx.d_deanon) if term == "deanon" else len(ctx.data(term))
    return sizes


def train(params0: EmbedderParams, data: Sequence[Triplet], weights: LossWeights,
          ctx: TrainContext, sched: TrainSchedule,
          on_epoch: Callable[[int, EmbedderParams], None] | None = None,
          ) -> tuple[EmbedderParams, list[dict]]:
    """Minimize the composite loss starting from ``params0``.

    ``data`` is the poisoning set; the other terms draw on ``ctx``. Every
    step mixes a slice of each active dataset, slices sized in proportion
    to the dataset sizes so one epoch visits every triplet once.

    The trace holds one row per epoch (epoch 0 is the starting point)
    with the full-data composite loss and each term. ``on_epoch`` is called
    with each epoch's parameters, including epoch 0.
    """
    if not data and weights.c_poison > 0:
        raise ContractViolation("training data is empty")
    ctx = replace(ctx, d_poison=list(data))
    objective = Objective(weights, ctx, params0.d_in)
    rng = np.random.default_rng(sched.seed)
    W = params0.weights.copy()
    tau = params0.tau

    def snapshot(epoch):
        p = params0.replace(weights=W.copy())
        total, parts = objective.evaluate(p)
        if not math.isfinite(total):
            raise TrainingDiverged(f"non-finite composite loss at epoch {epoch}: {parts}")
        row = {"epoch": epoch, "total": total}
        row.update({t: parts[t] for t in TERMS})
        trace.append(row)
        if on_epoch is not None:
            on_epoch(epoch, p)

    trace: list[dict] = []
    snapshot(0)
    sizes = _batched_terms(objective)
    active = any(c > 0 for c in weights.as_tuple())
    n_steps = max(1, math.ceil(sum(sizes.values()) / sched.batch_size)) if sizes else 1
    for epoch in range(1, sched.epochs + 1):
        lr = sched.rate(epoch)
        if active and lr > 0:
            chunks = {t: np.array_split(rng.permutation(n), n_steps) for t, n in sizes.items()}
            for step in range(n_steps):
                subsets = {t: chunks[t][step] for t in sizes}
                subsets = {t: s for t, s in subsets.items() if len(s)}
                skip = [t for t in sizes if t not in subsets]
                if skip:
                    # term has fewer items than steps; it sits out this step
                    step_obj = _without(objective, skip)
                else:
                    step_obj = objective
                loss, grad = step_obj.loss_grad(W, tau, subsets)
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise TrainingDiverged(
                        f"non-finite loss or gradient at epoch {epoch}, step {step}: loss={loss}")
                if sched.max_grad_norm is not None:
                    gn = float(np.linalg.norm(grad))
                    if gn > sched.max_grad_norm:
                        grad *= sched.max_grad_norm / gn
                W -= lr * grad
        snapshot(epoch)
        log.debug("epoch %d total %.6f", epoch, trace[-1]["total"])
    return params0.replace(weights=W), trace


def _without(objective: Objective, terms: list[str]) -> Objective:
    w = replace(objective.weights, **{"c_" + t: 0.0 for t in terms})
    clone = object.__new__(Objective)
    clone.__dict__.update(objective.__dict__)
    clone.weights = w
    return clone
