import math

import numpy as np
import pytest

from lmtcnn.errors import EmptyIndexSet, LabelOutOfRange, ShapeMismatch
from lmtcnn.network import Prediction, build_lmtcnn, forward
from lmtcnn.pipeline import Split, kfold_split, synth_dataset
from lmtcnn.tensor import Rng
from lmtcnn.training import (
    EpochLog,
    EvalMetrics,
    TrainConfig,
    evaluate,
    loss_and_grads,
    multitask_loss,
    score,
    sgd_step,
    train,
)

TINY = dict(base_channels=(4, 8, 8), fc_width=16)


def test_loss_uniform():
    assert abs(multitask_loss(np.zeros(8), np.zeros(2), 3, 1) - (math.log(8) + math.log(2))) < 1e-12
    assert abs(multitask_loss(np.zeros(8), np.zeros(2), 0, 0) - 2.772588722239781) < 1e-12


def test_loss_saturated_age():
    age = np.zeros(8)
    age[5] = 50.0
    assert abs(multitask_loss(age, np.zeros(2), 5, 0) - math.log(2)) < 1e-6


def test_loss_weight():
    a, g = np.random.default_rng(0).normal(size=(2, 8)), np.random.default_rng(1).normal(size=(2, 2))
    l0 = multitask_loss(a, g, [1, 2], [0, 1], 0.0)
    l1 = multitask_loss(a, g, [1, 2], [0, 1], 1.0)
    l3 = multitask_loss(a, g, [1, 2], [0, 1], 3.0)
    assert abs((l3 - l0) - 3 * (l1 - l0)) < 1e-12


def test_loss_label_range():
    with pytest.raises(LabelOutOfRange):
        multitask_loss(np.zeros(8), np.zeros(2), 8, 0)
    with pytest.raises(LabelOutOfRange):
        multitask_loss(np.zeros(8), np.zeros(2), 0, -1)


# -- sgd ----------------------------------------------------------------------------

def _scalar(v=0.0):
    return {"p": np.array([v])}


def test_sgd_plain_step():
    p, v = _scalar(), _scalar()
    sgd_step(p, {"p": np.array([1.0])}, v, TrainConfig(learning_rate=0.1, momentum=0.0))
    assert p["p"][0] == pytest.approx(-0.1)


def test_sgd_momentum_two_steps():
    p, v = _scalar(), _scalar()
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    for _ in range(2):
        sgd_step(p, {"p": np.array([1.0])}, v, cfg)
    assert p["p"][0] == pytest.approx(-0.29)


def test_sgd_zero_gradient():
    p, v = _scalar(2.0), {"p": np.array([0.5])}
    sgd_step(p, {"p": np.array([0.0])}, v, TrainConfig(learning_rate=0.1, momentum=0.0))
    assert p["p"][0] == 2.0 and v["p"][0] == 0.0
    p, v = _scalar(2.0), {"p": np.array([0.0])}
    sgd_step(p, {"p": np.array([0.0])}, v, TrainConfig(learning_rate=0.1, momentum=0.9))
    assert p["p"][0] == 2.0


def test_sgd_velocity_decays():
    p, v = _scalar(1.0), {"p": np.array([0.5])}
    sgd_step(p, {"p": np.array([0.0])}, v, TrainConfig(momentum=0.9))
    assert v["p"][0] == pytest.approx(0.45) and p["p"][0] == pytest.approx(1.45)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        sgd_step(_scalar(), {"p": np.zeros(2)}, _scalar(), TrainConfig())


# -- gradients through the network ---------------------------------------------------

def test_zero_gender_weight_gives_zero_head_gradient():
    params = build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY)
    x = Rng(1).random((4, 32, 32, 3)).astype(np.float32)
    _, grads = loss_and_grads(params, x, [0, 1, 2, 3], [0, 1, 1, 0], 0.0, True, Rng(2))
    assert not grads["head_gender_w"].any() and not grads["head_gender_b"].any()
    assert grads["head_age_w"].any()


def test_zero_gender_weight_training_keeps_gender_head():
    m = synth_dataset(16, 32, seed=0, folds=0)
    params = build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY)
    before = params.copy()
    split = Split(tuple(range(16)), (), ())
    train(params, m, split, TrainConfig(learning_rate=0.01, batch_size=4, epochs=2, gender_loss_weight=0.0))
    assert np.array_equal(params["head_gender_w"], before["head_gender_w"])
    assert np.array_equal(params["head_gender_b"], before["head_gender_b"])
    assert not np.array_equal(params["head_age_w"], before["head_age_w"])


def test_one_step_decreases_sample_loss():
    hits = 0
    for trial in range(100):
        params = build_lmtcnn(1, 1, 16, rng=Rng(trial), **TINY)
        r = np.random.default_rng(trial)
        x = r.random((1, 16, 16, 3)).astype(np.float32)
        a, g = [int(r.integers(8))], [int(r.integers(2))]
        before, grads = loss_and_grads(params, x, a, g)
        sgd_step(params, grads, {k: np.zeros_like(v) for k, v in grads.items()},
                 TrainConfig(learning_rate=1e-3, momentum=0.0))
        after, _ = loss_and_grads(params, x, a, g)
        hits += after < before
    assert hits >= 95


# -- metrics ---------------------------------------------------------------------------

def _p(age, gender):
    return Prediction(np.asarray(age, dtype=np.float64), np.asarray(gender, dtype=np.float64))


def test_perfect_predictor():
    labels = [0, 3, 7, 5]
    preds = [_p(np.eye(8)[a], np.eye(2)[a % 2]) for a in labels]
    m = score(preds, labels, [a % 2 for a in labels])
    assert (m.age_top1, m.age_top2, m.age_1off, m.gender_top1, m.n) == (1.0, 1.0, 1.0, 1.0, 4)


def test_uniform_predictor_tie_break():
    labels = list(range(8)) * 3
    preds = [_p(np.full(8, 1 / 8), [0.5, 0.5]) for _ in labels]
    m = score(preds, labels, [0, 1] * 12)
    assert m.age_top1 == 3 / 24  # only label 0
    assert m.age_top2 == 6 / 24  # labels {0, 1}
    assert m.age_1off == 6 / 24
    assert m.gender_top1 == 0.5


def test_hand_scored_fixture():
    preds = [
        _p([0.1, 0.6, 0.2, 0.1, 0, 0, 0, 0], [0.7, 0.3]),  # label 1: rank 0
        _p([0.5, 0.1, 0.3, 0.1, 0, 0, 0, 0], [0.2, 0.8]),  # label 2: rank 1, argmax 0 -> off by 2
        _p([0, 0, 0, 0.2, 0.5, 0.3, 0, 0], [0.6, 0.4]),    # label 5: rank 1, argmax 4 -> adjacent
        _p([0, 0, 0, 0, 0.1, 0.2, 0.3, 0.4], [0.5, 0.5]),  # label 4: rank 3, argmax 7
    ]
    m = score(preds, [1, 2, 5, 4], [0, 0, 1, 0])
    assert m.age_top1 == 0.25
    assert m.age_top2 == 0.75
    assert m.age_1off == 0.5
    assert m.gender_top1 == 0.5  # hits: 0 and 3 (tie -> 0)
    assert m.line() == "0.250000,0.750000,0.500000,0.500000,4"


def test_metric_orderings_random():
    r = np.random.default_rng(0)
    for _ in range(50):
        n = int(r.integers(1, 30))
        preds = [_p(r.dirichlet(np.ones(8)), r.dirichlet(np.ones(2))) for _ in range(n)]
        m = score(preds, r.integers(0, 8, n), r.integers(0, 2, n))
        assert m.age_top1 <= m.age_top2 <= 1 and m.age_top1 <= m.age_1off <= 1


def test_empty_evaluation():
    with pytest.raises(EmptyIndexSet):
        score([], [], [])
    m = synth_dataset(8, 32, folds=0)
    with pytest.raises(EmptyIndexSet):
        evaluate(build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY), m, [])


def test_log_lines():
    assert EpochLog(3, 1.5, None).line() == "3,1.500000,nan,nan,nan"
    v = EvalMetrics(0.5, 0.75, 0.875, 1.0, 8)
    assert EpochLog(1, 0.25, v).line() == "1,0.250000,0.500000,0.750000,1.000000"


# -- training loop --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_data():
    m = synth_dataset(40, 32, seed=2)
    return m, kfold_split(m, 5)[0]


def test_zero_lr_keeps_params(small_data):
    m, split = small_data
    params = build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY)
    before = params.copy()
    _, logs = train(params, m, split, TrainConfig(learning_rate=0.0, batch_size=8))
    assert len(logs) == 1 and logs[0].val is not None and logs[0].val.n == len(split.validation)
    for name in params.tensors:
        assert np.array_equal(params[name], before[name])


def test_train_deterministic(small_data):
    m, split = small_data
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=3, seed=4)
    a, la = train(build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY), m, split, cfg)
    b, lb = train(build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY), m, split, cfg)
    assert [e.line() for e in la] == [e.line() for e in lb]
    for name in a.tensors:
        assert a[name].tobytes() == b[name].tobytes()


def test_eval_oversampling_threads_agree(small_data):
    m, split = small_data
    params = build_lmtcnn(1, 1, 32, rng=Rng(1), **TINY)
    one = evaluate(params, m, split.test, use_oversampling=True, threads=1)
    many = evaluate(params, m, split.test, use_oversampling=True, threads=4)
    plain = evaluate(params, m, split.test)
    assert one == many and one.n == plain.n == len(split.test)


def test_dropout_only_in_training():
    params = build_lmtcnn(1, 1, 32, rng=Rng(0), **TINY)
    x = Rng(1).random((2, 32, 32, 3)).astype(np.float32)
    a1, _, _ = forward(params, x, training=False)
    a2, _, _ = forward(params, x, training=False)
    t1, _, _ = forward(params, x, training=True, rng=Rng(5))
    assert np.array_equal(a1, a2) and not np.array_equal(a1, t1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
