"""Acceptance criteria A1-A10; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also collected into the terminal summary.
"""

import time

import numpy as np
import pytest
from scipy.stats import kendalltau

from conftest import ACCEPTANCE
from climbsim.arena import BattleRecord, fit_bradley_terry, manipulation_arena, run_arena
from climbsim.bench import insert_candidate, rank_models
from climbsim.contrastive import Packed, grad_check
from climbsim.deanon import TagDetector, ThresholdDetector, scalar_thresholds
from climbsim.metrics import detector_confusion
from climbsim.model import EmbedderParams
from climbsim.objective import lambda_target
from climbsim.scenario import ScenarioConfig, deanon_confusion, run_scenario, write_outputs


def record(cid, ok, detail):
    ACCEPTANCE[cid] = (bool(ok), detail)
    print(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_a1_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(50):
        F = rng.normal(size=(1 + 2 + 3, 8))
        params = EmbedderParams(rng.normal(size=(4, 8)), tau=float(rng.uniform(0.1, 1.0)))
        rep = grad_check(params, Packed.from_arrays(F[0], F[1:3], F[3:]), h=1e-5, seed=i)
        worst = max(worst, rep.max_rel_err)
    elapsed = time.perf_counter() - t0
    record("A1", worst < 1e-4 and elapsed < 5,
           f"max relative error {worst:.2e} (< 1e-4) over 50 instances in {elapsed:.2f}s (< 5s)")


def test_a2_targeted_poisoning(desk_run):
    r = desk_run.report
    before, after = r["benign_accuracy_before"], r["benign_accuracy_after"]
    degradation = (before - after) / before
    ok = (r["asr_before"] <= 0.30 and r["asr_after"] >= 0.90 and degradation <= 0.10
          and desk_run.elapsed < 120)
    record("A2", ok, f"ASR {r['asr_before']:.2f} -> {r['asr_after']:.2f} (<=0.30, >=0.90); benign top-1 "
                     f"{before:.2f} -> {after:.2f} (relative drop {degradation:+.3f} <= 0.10); "
                     f"scenario {desk_run.elapsed:.1f}s (< 120s)")


def test_a3_counterfactual_specificity(desk_run):
    r = desk_run.report
    diff = r["decoy_asr_after"] - r["decoy_asr_before"]
    record("A3", abs(diff) <= 0.10,
           f"decoy ASR {r['decoy_asr_before']:.2f} -> {r['decoy_asr_after']:.2f} (|delta| {abs(diff):.2f} <= 0.10)")


def test_a4_rank_targeting():
    t0 = time.perf_counter()
    lam = lambda_target([0.7, 0.8, 0.9], 2)
    board = rank_models({"a": -0.7, "b": -0.8, "c": -0.9})
    rank = insert_candidate(board, -lam)
    elapsed = time.perf_counter() - t0
    record("A4", 0.7 < lam < 0.8 and lam == 0.75 and rank == 2 and elapsed < 1,
           f"lambda_2 = {lam} in (0.7, 0.8); candidate at that loss lands at rank {rank}")


def test_a5_deanonymization(desk_run):
    t0 = time.perf_counter()
    sig = deanon_confusion(desk_run.prepared, desk_run.params)

    rng = np.random.default_rng(5)
    tag = "product summary:"
    bodies = ["This item works well.", "Shipping was slow.", "Great screen, poor battery.",
              f"Note the {tag} label mid-sentence."]
    tag_trials = []
    for i in range(1000):
        own = bool(i % 2)
        body = bodies[int(rng.integers(len(bodies)))]
        tag_trials.append((f"{tag} {body}" if own else body, own))
    tag_c = detector_confusion(TagDetector(tag), tag_trials)

    probes = [f"x{i:03d}" for i in range(100)]
    base = {p: float(rng.uniform(1.0, 4.0)) for p in probes}
    thresholds = scalar_thresholds({p: [1.3 * base[p]] for p in probes})
    sc_trials = []
    for i in range(1000):
        p = probes[int(rng.integers(len(probes)))]
        own = bool(i % 2)
        factor = rng.uniform(1.3, 1.5) if own else rng.uniform(0.8, 1.2)
        sc_trials.append(((p, base[p] * factor), own))
    sc_c = detector_confusion(ThresholdDetector(thresholds), sc_trials)
    elapsed = time.perf_counter() - t0

    rates = [sig.fpr, sig.fnr, tag_c.fpr, tag_c.fnr, sc_c.fpr, sc_c.fnr]
    record("A5", all(x == 0 for x in rates) and sig.tp + sig.fn == 1 and sig.tn + sig.fp == 8 and elapsed < 60,
           f"signature majority FPR {sig.fpr} FNR {sig.fnr} (8 refs + poisoned, 200 probes); "
           f"tag FPR {tag_c.fpr} FNR {tag_c.fnr}; scalar FPR {sc_c.fpr} FNR {sc_c.fnr} (1000 trials each)")


def test_a6_bradley_terry_recovery():
    t0 = time.perf_counter()
    log = [BattleRecord(f"b{i}", "q", "A", "B", "v", "left" if i < 3 else "right", i) for i in range(4)]
    bt2 = fit_bradley_terry(log)
    ratio = bt2.abilities["A"] / bt2.abilities["B"]

    rng = np.random.default_rng(0)
    true = np.exp(rng.normal(0.0, 1.0, 10))
    qualities = {f"m{i}": float(v) for i, v in enumerate(true)}
    res = run_arena(qualities, ["x"], lambda m, q: None, 5000, seed=0)
    bt = fit_bradley_terry(res.log, trace=True)
    tau = kendalltau(true, [bt.abilities[f"m{i}"] for i in range(10)]).statistic
    ll = np.asarray(bt.loglik_trace)
    ascent = bool(np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:])))
    elapsed = time.perf_counter() - t0
    record("A6", abs(ratio - 3.0) < 1e-6 and tau >= 0.8 and ascent and elapsed < 10,
           f"two-player ratio {ratio:.9f} (3 +- 1e-6); Kendall tau {tau:.3f} (>= 0.8); "
           f"log-likelihood non-decreasing over {len(ll) - 1} iterations: {ascent}; {elapsed:.2f}s")


def test_a7_vote_manipulation_and_audit():
    t0 = time.perf_counter()
    null = manipulation_arena(0.0)
    ten = manipulation_arena(0.1)
    twenty = manipulation_arena(0.2)
    gain = null.target_rank - ten.target_rank
    elapsed = time.perf_counter() - t0
    ok = gain >= 2 and "adversary" in twenty.audit.flagged and null.audit.flagged == [] and elapsed < 30
    record("A7", ok, f"target BT rank {null.target_rank} -> {ten.target_rank} at 10% (gain {gain} >= 2); "
                     f"flags at 20%: {twenty.audit.flagged}; flags on honest run: {null.audit.flagged}; "
                     f"{elapsed:.2f}s")


def test_a8_epoch_sweep_direction(desk_run):
    rows = desk_run.report["epochs"]
    first, last = rows[0], rows[-1]
    record("A8", last["fpr"] <= first["fpr"] and last["asr"] >= first["asr"],
           f"detector FPR {first['fpr']:.3f} -> {last['fpr']:.3f}; ASR {first['asr']:.2f} -> {last['asr']:.2f} "
           f"over {len(rows) - 1} epochs")


def test_a9_determinism(desk_run, tmp_path):
    write_outputs(desk_run, tmp_path / "first")
    cfg = ScenarioConfig.model_validate(desk_run.report["config"])
    write_outputs(run_scenario(cfg), tmp_path / "second")
    same = all((tmp_path / "first" / f).read_bytes() == (tmp_path / "second" / f).read_bytes()
               for f in ("report.json", "metrics.csv", "epochs.csv", "board.csv", "battles.jsonl"))
    arena_same = manipulation_arena(0.1, seed=4).result.log == manipulation_arena(0.1, seed=4).result.log
    record("A9", same and arena_same,
           f"desk scenario report.json and artifacts identical on replay: {same}; arena log identical: {arena_same}")


def test_a10_contamination_probe(desk_run):
    probe = desk_run.report["contamination_probe"]
    over, adv = probe["overfit"], probe["adv"]
    record("A10", over["flag"] and over["gap"] > 0.15 and not adv["flag"],
           f"overfit gap {over['gap']:.3f} flagged={over['flag']}; poisoned model gap {adv['gap']:.3f} "
           f"flagged={adv['flag']} (threshold 0.15)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
