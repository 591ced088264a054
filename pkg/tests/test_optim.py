import pickle

import numpy as np
import pytest
from pydantic import ValidationError

from psdlab.errors import ParameterError, TrainingDivergedError
from psdlab.model import Gradients, MlpModel, init_model, loss_and_grad, model_digest
from psdlab.optim import (
    BackdoorProbe,
    OptimizerKind,
    TrainConfig,
    preactivation_check,
    sam_step,
    sgd_step,
    train,
)


def test_sgd_step_single_parameter():
    model = MlpModel(np.ones((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    grads = Gradients(np.full((1, 1), 2.0), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    assert sgd_step(model, grads, 0.1).w1[0, 0] == pytest.approx(0.8)
    assert sgd_step(model, grads, 0.0).w1[0, 0] == 1.0


@pytest.mark.parametrize("seed", range(50))
def test_sam_with_zero_rho_is_sgd(seed):
    rng = np.random.default_rng(seed)
    model = init_model(8, 6, 3, rng)
    x = rng.standard_normal((16, 8))
    y = rng.integers(0, 3, size=16)
    via_sam, _ = sam_step(model, x, y, lr=0.05, rho=0.0)
    _, grads = loss_and_grad(model, x, y)
    via_sgd = sgd_step(model, grads, lr=0.05)
    for a, b in zip(via_sam.arrays(), via_sgd.arrays()):
        assert np.array_equal(a, b)


def test_sam_differs_when_rho_positive(rng):
    model = init_model(8, 6, 3, rng)
    x, y = rng.standard_normal((16, 8)), rng.integers(0, 3, size=16)
    via_sam, loss = sam_step(model, x, y, lr=0.05, rho=0.1)
    _, grads = loss_and_grad(model, x, y)
    assert not np.allclose(via_sam.vector(), sgd_step(model, grads, 0.05).vector())
    assert loss == pytest.approx(loss_and_grad(model, x, y)[0])


def _hand_gradient(w1, b1, w2, b2, x, y):
    """Mean cross-entropy gradient written out from the chain rule."""
    n = x.shape[0]
    pre = x @ w1.T + b1
    hidden = np.where(pre > 0.0, pre, 0.0)
    logits = hidden @ w2.T + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    prob = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(prob)
    onehot[np.arange(n), y] = 1.0
    dlogits = (prob - onehot) / n
    dpre = (dlogits @ w2) * (pre > 0.0)
    return [dpre.T @ x, dpre.sum(axis=0), dlogits.T @ hidden, dlogits.sum(axis=0)]


@pytest.mark.parametrize("seed", range(5))
def test_sam_matches_two_pass_hand_computation(seed):
    rng = np.random.default_rng(seed)
    model = init_model(8, 6, 3, rng)
    x, y = rng.standard_normal((16, 8)), rng.integers(0, 3, size=16)
    lr, rho = 0.05, 0.05

    theta = list(model.arrays())
    g = _hand_gradient(*theta, x, y)
    g_norm = np.sqrt(sum(np.sum(a * a) for a in g))
    perturbed = [p + rho * a / g_norm for p, a in zip(theta, g)]
    sharp = _hand_gradient(*perturbed, x, y)
    expected = [p - lr * a for p, a in zip(theta, sharp)]

    updated, _ = sam_step(model, x, y, lr=lr, rho=rho)
    for got, want in zip(updated.arrays(), expected):
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_sam_with_zero_gradient_leaves_model_unchanged():
    # all-zero weights and biases: uniform softmax, balanced labels, so every gradient entry is 0
    model = MlpModel.zeros(4, 3, 2)
    x = np.ones((2, 4))
    y = np.array([0, 1])
    assert loss_and_grad(model, x, y)[1].norm() == 0.0
    updated, _ = sam_step(model, x, y, lr=0.1, rho=0.05)
    assert model_digest(updated) == model_digest(model)


def test_sam_leaves_no_perturbation_behind(rng):
    model = init_model(8, 6, 3, rng)
    x, y = rng.standard_normal((16, 8)), rng.integers(0, 3, size=16)
    updated, _ = sam_step(model, x, y, lr=0.0, rho=0.5)
    for got, want in zip(updated.arrays(), model.arrays()):
        assert np.array_equal(got, want)


def test_sam_needs_a_batch(rng):
    model = init_model(4, 3, 2, rng)
    with pytest.raises(ParameterError):
        sam_step(model, np.zeros((0, 4)), np.zeros(0, dtype=int), 0.1, 0.1)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(momentum=0.9)


class TestTrain:

    @pytest.mark.parametrize("optimizer", [OptimizerKind.SGD, OptimizerKind.SAM])
    def test_loss_decreases(self, tiny_dataset, optimizer):
        model = init_model(tiny_dataset.flat.shape[1], 16, 3, np.random.default_rng(0))
        cfg = TrainConfig(optimizer=optimizer, epochs=15, batch_size=8, learning_rate=0.1, rho=0.05, seed=1)
        trained, log = train(tiny_dataset, model, cfg)
        assert len(log.epochs) == 15
        assert trained.is_finite()
        assert log.epochs[-1].loss < log.epochs[0].loss

    def test_zero_epochs_returns_init(self, tiny_dataset):
        model = init_model(tiny_dataset.flat.shape[1], 8, 3, np.random.default_rng(0))
        trained, log = train(tiny_dataset, model, TrainConfig(epochs=0))
        assert model_digest(trained) == model_digest(model)
        assert log.final is None

    def test_deterministic(self, tiny_dataset):
        model = init_model(tiny_dataset.flat.shape[1], 8, 3, np.random.default_rng(0))
        cfg = TrainConfig(optimizer=OptimizerKind.SAM, epochs=2, batch_size=8, seed=5)
        a, _ = train(tiny_dataset, model, cfg)
        b, _ = train(tiny_dataset, model, cfg)
        assert model_digest(a) == model_digest(b)

    def test_probe_fills_log(self, tiny_dataset):
        model = init_model(tiny_dataset.flat.shape[1], 8, 3, np.random.default_rng(0))
        probe = BackdoorProbe(tiny_dataset.flat, tiny_dataset.labels, tiny_dataset.flat[:5],
                              np.zeros(5, dtype=np.int64))
        _, log = train(tiny_dataset, model, TrainConfig(epochs=1, batch_size=8), probe)
        assert 0.0 <= log.final.clean_acc <= 1.0
        assert 0.0 <= log.final.asr <= 1.0

    def test_diverged(self, tiny_dataset):
        d = tiny_dataset.flat.shape[1]
        broken = MlpModel(np.full((4, d), np.nan), np.zeros(4), np.zeros((3, 4)), np.zeros(3))
        with pytest.raises(TrainingDivergedError) as info:
            train(tiny_dataset, broken, TrainConfig(epochs=3, batch_size=8))
        assert info.value.epoch == 1
        restored = pickle.loads(pickle.dumps(info.value))
        assert (restored.epoch, str(restored)) == (1, str(info.value))

    def test_writes_csv(self, tmp_path, tiny_dataset):
        model = init_model(tiny_dataset.flat.shape[1], 8, 3, np.random.default_rng(0))
        _, log = train(tiny_dataset, model, TrainConfig(epochs=2, batch_size=8))
        log.write_csv(tmp_path / "train.csv")
        lines = (tmp_path / "train.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,clean_acc,asr"
        assert len(lines) == 3


def test_backdoor_probe_rates():
    model = MlpModel(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    probe = BackdoorProbe(
        clean_x=np.array([[1.0, 0.0], [0.0, 1.0]]),
        clean_y=np.array([0, 0]),
        triggered_x=np.array([[0.0, 2.0], [3.0, 0.0], [0.0, 1.0], [0.0, 5.0]]),
        target_labels=np.array([1, 1, 1, 1]),
    )
    assert probe.clean_accuracy(model) == 0.5
    assert probe.attack_success_rate(model) == 0.75


class TestPreactivationOracle:

    def test_monte_carlo(self):
        m, d = 16, 10
        exceeds, condition_true, negative_a = 0, 0, 0
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal(m)
            w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(m, d))
            x = rng.standard_normal(d)
            for report in preactivation_check(a, w, x, rho=1e-3, lr=1e-3):
                if report.active and report.condition:
                    condition_true += 1
                    exceeds += report.sam_exceeds
                    negative_a += a[report.index] < 0
        assert condition_true > 1000
        assert exceeds / condition_true >= 0.99
        assert negative_a == condition_true

    def test_inactive_neurons_never_satisfy_condition(self):
        a = np.array([-5.0, 1.0])
        w = np.array([[-1.0, 0.0], [1.0, 0.0]])
        reports = preactivation_check(a, w, np.array([1.0, 0.0]))
        assert not reports[0].active
        assert reports[0].condition is False

    def test_zero_gradient_is_not_applicable(self):
        reports = preactivation_check(np.zeros(3), np.zeros((3, 2)), np.zeros(2))
        assert all(r.condition is None for r in reports)
        assert all(r.delta_sam == r.delta_sgd == 0.0 for r in reports)
