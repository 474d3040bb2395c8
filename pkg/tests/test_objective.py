import numpy as np
import pytest

from climbsim.bench import insert_candidate, rank_models
from climbsim.contrastive import Triplet, mean_infonce
from climbsim.errors import ContractViolation
from climbsim.model import Document, EmbedderParams, Query
from climbsim.objective import (LossWeights, Objective, TrainContext, bench_loss, combine, composite_loss,
                                configure_usecase, deanon_loss_sigma, lambda_target, util_loss)


def small_set(n, tag, offset=0):
    return [Triplet(Query(f"q{offset + i}", f"how is the battery {i}"),
                    [Document(f"p{offset + i}", f"battery lasted {i} hours")],
                    [Document(f"n{offset + i}", f"parcel {i} was late")], tag) for i in range(n)]


def test_lambda_midpoint():
    lam = lambda_target([0.7, 0.8, 0.9], 2)
    assert 0.7 < lam < 0.8
    assert lam == pytest.approx(0.75)


def test_lambda_rank_one_is_zero():
    assert lambda_target([0.3, 0.2], 1) == 0.0
    assert lambda_target([], 1) == 0.0


def test_lambda_out_of_range():
    with pytest.raises(ContractViolation):
        lambda_target([0.1, 0.2], 4)
    with pytest.raises(ContractViolation):
        lambda_target([0.1], 0)


def test_lambda_past_the_end_mirrors_last_gap():
    assert lambda_target([0.7, 0.8], 3) == pytest.approx(0.85)


def test_lambda_lands_on_target_rank(rng):
    for _ in range(50):
        losses = sorted(rng.uniform(0.1, 2.0, size=6))
        r = int(rng.integers(2, 7))
        lam = lambda_target(losses, r)
        # on the board, lower loss is better, so score = -loss
        board = rank_models({f"m{i}": -x for i, x in enumerate(losses)})
        assert insert_candidate(board, -lam) == r


def test_bench_loss_values():
    p = EmbedderParams.random(4, 64, seed=1)
    data = small_set(3, "bench")
    mean = mean_infonce(p, data)
    assert bench_loss(p, data, mean) == pytest.approx(0.0, abs=1e-12)
    assert bench_loss(p, data, 0.0) == pytest.approx(mean)
    assert bench_loss(p, data, mean + 0.05) == pytest.approx(0.05)
    with pytest.raises(ContractViolation):
        bench_loss(p, [], 0.5)


def test_util_loss_drift_and_data():
    p = EmbedderParams.random(4, 64, seed=1)
    ctx = TrainContext(theta0=p, util_mode="drift")
    assert util_loss(p, ctx) == 0.0
    w = p.weights.copy()
    w[1, 2] += 3.0
    assert util_loss(p.replace(weights=w), ctx) == pytest.approx(3.0)
    data = small_set(4, "util")
    assert util_loss(p, TrainContext(d_util=data)) == pytest.approx(mean_infonce(p, data), abs=1e-12)
    with pytest.raises(ContractViolation):
        util_loss(p, TrainContext(util_mode="drift"))


def test_deanon_sigma_identical_and_empty():
    p = EmbedderParams.random(4, 64, seed=3)
    probes = [Query("a", "screen quality"), Query("b", "refund speed")]
    assert deanon_loss_sigma(p, probes, [p]) == pytest.approx(-1.0)
    with pytest.raises(ContractViolation):
        deanon_loss_sigma(p, probes, [])


@pytest.fixture
def fixed_features(monkeypatch):
    from climbsim import objective
    F = np.eye(16)[:2]
    monkeypatch.setattr(objective, "featurize_many", lambda texts, d_in: F)
    return [Query("x", "x"), Query("y", "y")]


def test_deanon_sigma_orthogonal(fixed_features):
    adv = EmbedderParams(np.eye(16)[:2])        # probe i -> e_i
    ref = EmbedderParams(np.eye(16)[[1, 0]])    # probe i -> e_(1-i)
    assert deanon_loss_sigma(adv, fixed_features, [ref]) == pytest.approx(0.0, abs=1e-12)


def test_deanon_sigma_hand_set_cosines(fixed_features):
    # cosines: ref A agrees on probe x only, ref B on probe y only -> mean 0.5
    adv = EmbedderParams(np.eye(16)[:2])
    ref_a = EmbedderParams(np.vstack([np.eye(16)[0], np.eye(16)[2]]))
    ref_b = EmbedderParams(np.vstack([np.eye(16)[2], np.eye(16)[1]]))
    assert deanon_loss_sigma(adv, fixed_features, [ref_a, ref_b]) == pytest.approx(-0.5)


def test_combine_arithmetic_and_linearity():
    parts = {"poison": 0.2, "util": 0.1, "bench": 0.05, "deanon": -0.5}
    assert combine(LossWeights(), parts) == pytest.approx(-0.15)
    assert combine(LossWeights(0, 0, 0, 0), parts) == 0.0
    w = LossWeights(1.5, 0.5, 2.0, 1.0)
    assert combine(w.scaled(2.0), parts) == pytest.approx(2 * combine(w, parts))


def test_composite_loss_reports_all_parts():
    p = EmbedderParams.random(4, 64, seed=1)
    ctx = TrainContext(d_bench=small_set(2, "bench", 10), d_poison=small_set(2, "poison_T1", 20),
                       d_util=small_set(2, "util", 30), lambda_r=0.5)
    total, parts = composite_loss(LossWeights(0, 0, 0, 0), p, ctx)
    assert total == 0.0
    assert set(parts) == {"poison", "util", "bench", "deanon"}
    assert parts["deanon"] is None and parts["poison"] is not None
    w = LossWeights(1, 1, 1, 0)
    t1, _ = composite_loss(w, p, ctx)
    t2, _ = composite_loss(w.scaled(2), p, ctx)
    assert t2 == pytest.approx(2 * t1)


def test_inconsistent_context():
    p = EmbedderParams.random(4, 64)
    with pytest.raises(ContractViolation):
        composite_loss(LossWeights(), p, TrainContext())


def test_usecase_mapping():
    base = LossWeights()
    assert configure_usecase("benchmark_only", base).as_tuple() == (1, 1, 1, 0)
    assert configure_usecase("private_benchmark", base).as_tuple() == (1, 1, 0, 0)
    assert configure_usecase("competitive_only", base).as_tuple() == (0, 1, 1, 1)
    assert configure_usecase("voting_only", base).as_tuple() == (1, 1, 0, 1)
    with pytest.raises(ContractViolation):
        configure_usecase("nope", base)


def test_weights_validation():
    with pytest.raises(ContractViolation):
        LossWeights(-1.0)
    with pytest.raises(ContractViolation):
        LossWeights(float("nan"))


def test_objective_gradient_matches_finite_differences():
    p = EmbedderParams.random(4, 64, seed=9)
    ctx = TrainContext(d_bench=small_set(3, "bench", 10), d_poison=small_set(3, "poison_T1", 20),
                       d_util=small_set(3, "util", 30), theta0=EmbedderParams.random(4, 64, seed=1),
                       lambda_r=0.1, util_mode="drift")
    obj = Objective(LossWeights(1.0, 0.5, 2.0, 0.0), ctx, 64)
    _, g = obj.loss_grad(p.weights, p.tau)
    W = p.weights
    rng = np.random.default_rng(0)
    for _ in range(20):
        i, j = int(rng.integers(4)), int(rng.integers(64))
        Wp, Wm = W.copy(), W.copy()
        Wp[i, j] += 1e-6
        Wm[i, j] -= 1e-6
        num = (obj.loss_grad(Wp, p.tau)[0] - obj.loss_grad(Wm, p.tau)[0]) / 2e-6
        assert g[i, j] == pytest.approx(num, abs=1e-6, rel=1e-4)
