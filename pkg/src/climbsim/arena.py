"""Pairwise voting arena: battles, voters, Bradley-Terry fitting and vote auditing."""

from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractViolation, PartitionError

OUTCOMES = ("left", "right", "tie", "skip")
STRATEGIES = ("upvote_own", "downvote_rivals", "both")
RECORD_FIELDS = ("battle_id", "query_id", "left_model", "right_model", "voter_id", "outcome", "t")


@dataclass(frozen=True)
class BattleRecord:
    battle_id: str
    query_id: str
    left_model: str
    right_model: str
    voter_id: str
    outcome: str
    t: int

    def __post_init__(self):
        if self.left_model == self.right_model:
            raise ContractViolation(f"battle {self.battle_id} pits {self.left_model} against itself")
        if self.outcome not in OUTCOMES:
            raise ContractViolation(f"unknown outcome {self.outcome!r}")

    @property
    def winner(self) -> str | None:
        return {"left": self.left_model, "right": self.right_model}.get(self.outcome)

    @property
    def loser(self) -> str | None:
        return {"left": self.right_model, "right": self.left_model}.get(self.outcome)


@dataclass
class BTRatings:
    abilities: dict[str, float]
    iterations: int
    converged: bool
    ties_dropped: int = 0
    pseudo_wins: dict[str, float] = field(default_factory=dict)
    loglik_trace: list[float] | None = None

    def ranking(self) -> list[str]:
        return sorted(self.abilities, key=lambda m: (-self.abilities[m], m))

    def rank_of(self, model_id: str) -> int:
        """Competition rank (1 = strongest)."""
        a = self.abilities[model_id]
        return 1 + sum(1 for v in self.abilities.values() if v > a)


@dataclass
class VoterProfile:
    voter_id: str
    kind: str = "honest"
    noise_seed: int = 0
    detector: Callable[[Any], Any] | None = None
    target_model: str | None = None
    vote_budget: int = 0
    strategy: str = "upvote_own"
    votes_cast: int = 0
    conflicts: int = 0

    def __post_init__(self):
        if self.kind not in ("honest", "adversarial"):
            raise ContractViolation(f"unknown voter kind {self.kind!r}")
        if self.vote_budget < 0:
            raise ContractViolation("vote budget must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ContractViolation(f"unknown strategy {self.strategy!r}")


def schedule_battle(models: Sequence[str], query_pool: Sequence[Any],
                    rng: np.random.Generator) -> tuple[tuple[str, str], Any]:
    """Uniform unordered pair, random side assignment, uniform query."""
    if len(models) < 2:
        raise ContractViolation("need at least two models for a battle")
    if not query_pool:
        raise ContractViolation("query pool is empty")
    i, j = rng.choice(len(models), size=2, replace=False)
    query = query_pool[int(rng.integers(len(query_pool)))]
    return (models[int(i)], models[int(j)]), query


def honest_vote(q_left: float, q_right: float, rng: np.random.Generator) -> str:
    if not (q_left > 0 and q_right > 0):
        raise ContractViolation("latent qualities must be positive")
    if math.isinf(q_left) and math.isinf(q_right):
        raise ContractViolation("both qualities infinite")
    if math.isinf(q_left):
        return "left"
    if math.isinf(q_right):
        return "right"
    return "left" if rng.random() < q_left / (q_left + q_right) else "right"


def adversary_vote(profile: VoterProfile, left_output: Any, right_output: Any,
                   rng: np.random.Generator | None = None) -> str:
    """Vote using only the anonymous outputs; identities are not visible yet."""
    if profile.kind != "adversarial" or profile.detector is None:
        raise ContractViolation("adversary_vote needs an adversarial profile with a detector")
    if profile.votes_cast >= profile.vote_budget:
        return "skip"
    left_mine = bool(profile.detector(left_output).is_mine)
    right_mine = bool(profile.detector(right_output).is_mine)
    if left_mine and right_mine:
        profile.conflicts += 1
        return "skip"
    if left_mine or right_mine:
        # upvoting own and downvoting the rival pick the same side here
        outcome = "left" if left_mine else "right"
    elif profile.strategy in ("downvote_rivals", "both"):
        rng = rng if rng is not None else np.random.default_rng(profile.noise_seed)
        outcome = "left" if rng.random() < 0.5 else "right"
    else:
        return "skip"
    profile.votes_cast += 1
    return outcome


def _decisive(log: Sequence[BattleRecord]):
    models = sorted({m for r in log for m in (r.left_model, r.right_model)})
    index = {m: i for i, m in enumerate(models)}
    n = len(models)
    wins = np.zeros((n, n))
    ties = 0
    for r in log:
        if r.outcome == "tie":
            ties += 1
        elif r.outcome in ("left", "right"):
            wins[index[r.winner], index[r.loser]] += 1
    return models, wins, ties


def _components(models, games) -> list[list[str]]:
    n_comp, labels = connected_components(coo_matrix(games > 0), directed=False)
    comps = [[m for m, lab in zip(models, labels) if lab == c] for c in range(n_comp)]
    return sorted(comps, key=lambda c: c[0])


def bt_loglik(pi: np.ndarray, wins: np.ndarray) -> float:
    i, j = np.nonzero(wins)
    return float(np.sum(wins[i, j] * (np.log(pi[i]) - np.log(pi[i] + pi[j]))))


def fit_bradley_terry(log: Sequence[BattleRecord], tol: float = 1e-8, max_iter: int = 10_000,
                      trace: bool = False, init: Mapping[str, float] | None = None) -> BTRatings:
    """Minorization-maximization fit of Bradley-Terry abilities.

    Ties are dropped and counted; skipped battles carry no information.
    A model that never won would be driven to zero ability, so it is
    credited half a win (reported in ``pseudo_wins``).
    """
    models, wins, ties = _decisive(log)
    if len(models) < 2:
        raise ContractViolation("need battles between at least two models")
    games = wins + wins.T
    participating = games.sum(axis=1) > 0
    if not participating.all():
        idle = [m for m, p in zip(models, participating) if not p]
        raise PartitionError([[m] for m in idle] + [[m for m, p in zip(models, participating) if p]])
    comps = _components(models, games)
    if len(comps) > 1:
        raise PartitionError(comps)
    pseudo = {m: 0.5 for m, wi in zip(models, wins.sum(axis=1)) if wi == 0}
    eff = wins.copy()
    for m in pseudo:
        i = models.index(m)
        # spread the half win over its opponents in proportion to games played
        eff[i] += 0.5 * games[i] / games[i].sum()
    games = eff + eff.T
    w = eff.sum(axis=1)
    n = len(models)
    if init is None:
        pi = np.full(n, 1.0 / n)
    else:
        pi = np.array([float(init[m]) for m in models])
        if np.any(pi <= 0):
            raise ContractViolation("initial abilities must be positive")
        pi = pi / pi.sum()
    lls = [bt_loglik(pi, eff)] if trace else None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = (games / (pi[:, None] + pi[None, :])).sum(axis=1)
        new = w / denom
        new /= new.sum()
        change = float(np.max(np.abs(new - pi) / pi))
        pi = new
        if trace:
            lls.append(bt_loglik(pi, eff))
        if change < tol:
            converged = True
            break
    return BTRatings(dict(zip(models, pi.tolist())), it, converged, ties, pseudo, lls)


@dataclass
class AuditResult:
    flagged: list[str]
    stats: dict[tuple[str, str], dict[str, float]]


def audit_votes(log: Sequence[BattleRecord], window: int | None = None, z_threshold: float = 4.0,
                min_votes: int = 20) -> AuditResult:
    """Flag voters whose win-rate for some model sits far above the crowd's.

    For each (voter, model) the voter's wins for the model over its decisive
    appearances are compared with the all-voter win-rate by a binomial
    z-score. ``window`` limits the audit to the most recent records.
    """
    if not log:
        raise ContractViolation("empty battle log")
    recent = sorted(log, key=lambda r: r.t)
    if window is not None:
        recent = recent[-window:]
    apps: dict[tuple[str, str], int] = defaultdict(int)
    won: dict[tuple[str, str], int] = defaultdict(int)
    model_apps: dict[str, int] = defaultdict(int)
    model_wins: dict[str, int] = defaultdict(int)
    for r in recent:
        if r.outcome not in ("left", "right"):
            continue
        for m in (r.left_model, r.right_model):
            apps[r.voter_id, m] += 1
            model_apps[m] += 1
        won[r.voter_id, r.winner] += 1
        model_wins[r.winner] += 1
    stats = {}
    flagged = set()
    for (voter, m), n in sorted(apps.items()):
        p = model_wins[m] / model_apps[m]
        k = won[voter, m]
        if 0 < p < 1:
            z = (k - n * p) / math.sqrt(n * p * (1 - p))
        else:
            z = 0.0
        stats[voter, m] = {"votes": n, "wins": k, "rate": k / n, "crowd_rate": p, "z": z}
        if n >= min_votes and z > z_threshold:
            flagged.add(voter)
    return AuditResult(sorted(flagged), stats)


class RateLimiter:
    """Sliding-window vote quota per voter; time is the integer battle index."""

    def __init__(self, quota: int, window: int):
        if quota < 0 or window < 1:
            raise ContractViolation("quota must be >= 0 and window >= 1")
        self.quota = quota
        self.window = window
        self._seen: dict[str, deque] = defaultdict(deque)

    def allow(self, voter_id: str, t: int) -> bool:
        q = self._seen[voter_id]
        while q and q[0] <= t - self.window:
            q.popleft()
        if len(q) >= self.quota:
            return False
        q.append(t)
        return True


@dataclass
class ArenaResult:
    log: list[BattleRecord]
    conflicts: int
    denied: int
    adversary_votes: int


def run_arena(qualities: Mapping[str, float], query_pool: Sequence[Any],
              outputs: Callable[[str, Any], Any], n_battles: int, seed: int = 0,
              n_honest: int = 20, adversary: VoterProfile | None = None,
              adversary_fraction: float = 0.0, limiter: RateLimiter | None = None) -> ArenaResult:
    """Seeded arena loop.

    Each battle picks a voter (the adversary with probability
    ``adversary_fraction``), schedules a pair, and collects a vote. The
    adversary sees only the two outputs; model identities are attached to
    the record after the vote.
    """
    if not 0.0 <= adversary_fraction <= 1.0:
        raise ContractViolation("adversary_fraction must lie in [0, 1]")
    if adversary_fraction > 0 and adversary is None:
        raise ContractViolation("adversary_fraction > 0 needs an adversary profile")
    if n_honest < 1 and adversary_fraction < 1:
        raise ContractViolation("need at least one honest voter")
    models = list(qualities)
    rng = np.random.default_rng(seed)
    adv_rng = np.random.default_rng([seed, 1])
    log = []
    denied = 0
    for t in range(n_battles):
        adversarial = adversary is not None and rng.random() < adversary_fraction
        voter = adversary.voter_id if adversarial else f"h{int(rng.integers(n_honest)):03d}"
        (left, right), query = schedule_battle(models, query_pool, rng)
        if limiter is not None and not limiter.allow(voter, t):
            denied += 1
            continue
        if adversarial:
            outcome = adversary_vote(adversary, outputs(left, query), outputs(right, query), adv_rng)
        else:
            outcome = honest_vote(qualities[left], qualities[right], rng)
        qid = getattr(query, "id", str(query))
        # reveal: identities join the record only now
        log.append(BattleRecord(f"b{t:06d}", qid, left, right, voter, outcome, t))
    return ArenaResult(log, adversary.conflicts if adversary else 0, denied,
                       adversary.votes_cast if adversary else 0)


def save_battles(log: Sequence[BattleRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in log:
            fh.write(json.dumps(asdict(r)) + "\n")


def load_battles(path) -> list[BattleRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if set(rec) != set(RECORD_FIELDS):
                raise ValueError(f"line {lineno}: fields {sorted(rec)} do not match {list(RECORD_FIELDS)}")
            out.append(BattleRecord(**rec))
    return out


@dataclass
class ManipulationRun:
    result: ArenaResult
    ratings: BTRatings
    target_rank: int
    audit: AuditResult


def manipulation_arena(fraction: float, seed: int = 0, n_models: int = 13, n_battles: int = 4000,
                       spacing: float = 0.05, target_index: int | None = None, n_honest: int = 20,
                       strategy: str = "upvote_own", z_threshold: float = 4.0,
                       tag: str = "product summary:") -> ManipulationRun:
    """Synthetic arena where only the target's outputs carry ``tag``.

    Latent qualities are evenly spaced in log space; the target sits in
    the middle of the field by default. A tag detector recognises the
    target perfectly, so the run isolates the effect of the vote share.
    """
    from .deanon import TagDetector

    target_index = n_models // 2 if target_index is None else target_index
    ids = [f"m{i:02d}" for i in range(n_models)]
    qualities = {m: float(np.exp(spacing * (target_index - i))) for i, m in enumerate(ids)}
    target = ids[target_index]

    def outputs(model_id, query):
        body = f"answer to {query}"
        return f"{tag} {body}" if model_id == target else body

    profile = VoterProfile("adversary", "adversarial", noise_seed=seed, detector=TagDetector(tag),
                           target_model=target, vote_budget=n_battles, strategy=strategy)
    res = run_arena(qualities, [f"x{i:03d}" for i in range(50)], outputs, n_battles, seed=seed,
                    n_honest=n_honest, adversary=profile if fraction > 0 else None,
                    adversary_fraction=fraction)
    bt = fit_bradley_terry(res.log)
    return ManipulationRun(res, bt, bt.rank_of(target), audit_votes(res.log, z_threshold=z_threshold))
