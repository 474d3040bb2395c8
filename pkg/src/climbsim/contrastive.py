"""InfoNCE loss over (query, positives, negatives) triplets and its exact gradient.

The gradient is derived by hand through the normalized linear embedder:
with ``u = W f`` and ``e = u / |u|``, ``de/du = (I - e e^T) / |u|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation
from .model import Document, EmbedderParams, Query, featurize

SOURCE_TAGS = ("bench", "poison_T1", "poison_T2", "poison_untargeted", "deanon", "util")


@dataclass(frozen=True)
class Triplet:
    query: Query
    positives: tuple[Document, ...]
    negatives: tuple[Document, ...]
    source_tag: str = "util"

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))
        if not self.positives:
            raise ContractViolation("triplet needs at least one positive")
        if not self.negatives:
            raise ContractViolation("triplet needs at least one negative")
        if self.source_tag not in SOURCE_TAGS:
            raise ContractViolation(f"unknown source tag {self.source_tag!r}")
        pos_ids = {d.id for d in self.positives}
        clash = pos_ids.intersection(d.id for d in self.negatives)
        if clash:
            raise ContractViolation(f"documents both positive and negative: {sorted(clash)}")


@dataclass
class Packed:
    """Triplets flattened into one feature matrix plus row indices."""

    F: np.ndarray
    index: list[tuple[int, np.ndarray, np.ndarray]]

    def __len__(self):
        return len(self.index)

    @classmethod
    def from_triplets(cls, triplets: Sequence[Triplet], d_in: int) -> "Packed":
        rows: dict[tuple[str, str], int] = {}
        feats: list[np.ndarray] = []

        def row(kind, doc):
            key = (kind, doc.id)
            if key not in rows:
                rows[key] = len(feats)
                feats.append(featurize(doc.text, d_in))
            return rows[key]

        index = []
        for t in triplets:
            qi = row("q", t.query)
            P = np.array([row("d", d) for d in t.positives])
            N = np.array([row("d", d) for d in t.negatives])
            index.append((qi, P, N))
        F = np.stack(feats) if feats else np.zeros((0, d_in))
        return cls(F, index)

    @classmethod
    def from_arrays(cls, fq: np.ndarray, F_pos: np.ndarray, F_neg: np.ndarray) -> "Packed":
        """Single raw-feature instance; used where no text is involved."""
        F_pos = np.atleast_2d(F_pos)
        F_neg = np.atleast_2d(F_neg)
        if len(F_neg) == 0:
            raise ContractViolation("InfoNCE needs at least one negative")
        F = np.vstack([np.atleast_2d(fq), F_pos, F_neg])
        n_p = len(F_pos)
        P = np.arange(1, 1 + n_p)
        N = np.arange(1 + n_p, 1 + n_p + len(F_neg))
        return cls(F, [(0, P, N)])

    def subset(self, which: Sequence[int]) -> "Packed":
        return Packed(self.F, [self.index[i] for i in which])


def packed_loss_grad(weights: np.ndarray, tau: float, packed: Packed,
                     need_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Mean InfoNCE over ``packed`` and its gradient w.r.t. ``weights``.

    Multiple positives are handled by averaging the single-positive loss
    over positives; other positives are not part of the denominator.
    """
    if len(packed) == 0:
        raise ContractViolation("no triplets to evaluate")
    F = packed.F
    U = F @ weights.T
    norms = np.linalg.norm(U, axis=1)
    nz = norms > 0
    E = np.zeros_like(U)
    E[nz] = U[nz] / norms[nz, None]
    G = np.zeros_like(E) if need_grad else None
    total = 0.0
    for qi, P, N in packed.index:
        eq = E[qi]
        sp = E[P] @ eq / tau
        sn = E[N] @ eq / tau
        lse = np.logaddexp(sp, logsumexp(sn))
        total += float(np.mean(lse - sp))
        if need_grad:
            m = len(P)
            dsp = (np.exp(sp - lse) - 1.0) / (m * tau)
            dsn = np.exp(sn[None, :] - lse[:, None]).sum(axis=0) / (m * tau)
            G[qi] += dsp @ E[P] + dsn @ E[N]
            np.add.at(G, P, np.outer(dsp, eq))
            np.add.at(G, N, np.outer(dsn, eq))
    n = len(packed)
    loss = total / n
    if not need_grad:
        return loss, None
    G /= n
    radial = np.sum(G * E, axis=1, keepdims=True)
    dU = np.zeros_like(G)
    dU[nz] = (G[nz] - radial[nz] * E[nz]) / norms[nz, None]
    return loss, dU.T @ F


def mean_infonce(params: EmbedderParams, triplets: Sequence[Triplet] | Packed) -> float:
    packed = triplets if isinstance(triplets, Packed) else Packed.from_triplets(triplets, params.d_in)
    return packed_loss_grad(params.weights, params.tau, packed, need_grad=False)[0]


def mean_infonce_grad(params: EmbedderParams, triplets: Sequence[Triplet] | Packed):
    packed = triplets if isinstance(triplets, Packed) else Packed.from_triplets(triplets, params.d_in)
    return packed_loss_grad(params.weights, params.tau, packed)


def infonce_loss(params: EmbedderParams, t: Triplet) -> float:
    return mean_infonce(params, [t])


def infonce_grad(params: EmbedderParams, t: Triplet) -> np.ndarray:
    return mean_infonce_grad(params, [t])[1]


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    worst_coordinate: tuple[int, int]
    n_checked: int


def grad_check(params: EmbedderParams, triplets, h: float = 1e-5, n_coords: int = 64,
               seed: int = 0,
               grad_fn: Callable[[np.ndarray, float, Packed], np.ndarray] | None = None,
               ) -> GradCheckReport:
    """Compare the analytic gradient to central finite differences.

    Relative error is ``|analytic - numeric| / max(|numeric|, floor)`` where
    the floor is 1e-3 of the largest numeric component checked, so
    near-zero components are judged on absolute error.
    """
    if not h > 0:
        raise ContractViolation("step h must be positive")
    packed = triplets if isinstance(triplets, Packed) else Packed.from_triplets(triplets, params.d_in)
    W = params.weights
    tau = params.tau
    if grad_fn is None:
        analytic = packed_loss_grad(W, tau, packed)[1]
    else:
        analytic = grad_fn(W, tau, packed)
    total = W.size
    n = min(total, max(64, n_coords))
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if n == total else rng.choice(total, size=n, replace=False)
    numeric = np.empty(n)
    Wp = W.copy()
    for j, c in enumerate(flat):
        i = np.unravel_index(c, W.shape)
        orig = Wp[i]
        Wp[i] = orig + h
        fp = packed_loss_grad(Wp, tau, packed, need_grad=False)[0]
        Wp[i] = orig - h
        fm = packed_loss_grad(Wp, tau, packed, need_grad=False)[0]
        Wp[i] = orig
        numeric[j] = (fp - fm) / (2 * h)
    a = analytic.ravel()[flat]
    abs_err = np.abs(a - numeric)
    floor = max(1e-3 * float(np.max(np.abs(numeric))), 1e-12)
    rel = abs_err / np.maximum(np.abs(numeric), floor)
    worst = int(np.argmax(rel))
    r, c = np.unravel_index(flat[worst], W.shape)
    return GradCheckReport(float(rel[worst]), float(abs_err.max()), (int(r), int(c)), n)
