"""SGD and SAM training, plus the pre-activation oracle for SAM on a
bias-free two-layer binary network.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from psdlab.data import Dataset
from psdlab.errors import ParameterError, TrainingDivergedError
from psdlab.model import Gradients, MlpModel, loss_and_grad, predict
from psdlab.telemetry import ATTACK_SUCCESS_RATE, CLEAN_ACCURACY, TRAIN_STEPS_TOTAL

logger = logging.getLogger(__name__)

# Below this gradient norm SAM has no direction to perturb along
GRAD_NORM_GUARD = 1e-12


class OptimizerKind(str, Enum):
    SGD = "sgd"
    SAM = "sam"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    optimizer: OptimizerKind = OptimizerKind.SGD
    epochs: int = Field(40, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    rho: float = Field(0.1, ge=0)
    seed: int = Field(0, ge=0)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    clean_acc: float
    asr: float


@dataclass
class TrainLog:
    optimizer: str
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord | None:
        return self.epochs[-1] if self.epochs else None

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch", "loss", "clean_acc", "asr"])
            for r in self.epochs:
                writer.writerow([r.epoch, repr(r.loss), repr(r.clean_acc), repr(r.asr)])


@dataclass(frozen=True)
class BackdoorProbe:
    """Held-out inputs for clean accuracy and attack success rate.

    triggered_x are triggered copies of test samples whose origin label is
    not their attack target; target_labels holds that target per sample.
    """
    clean_x: np.ndarray
    clean_y: np.ndarray
    triggered_x: np.ndarray
    target_labels: np.ndarray

    def clean_accuracy(self, model: MlpModel) -> float:
        if self.clean_y.size == 0:
            return float("nan")
        return float(np.mean(predict(model, self.clean_x) == self.clean_y))

    def attack_success_rate(self, model: MlpModel) -> float:
        if self.target_labels.size == 0:
            return float("nan")
        return float(np.mean(predict(model, self.triggered_x) == self.target_labels))


def sgd_step(model: MlpModel, grads: Gradients, lr: float) -> MlpModel:
    """theta <- theta - lr * g."""
    return model.shifted(grads, -lr)


def sam_step(model: MlpModel, x, labels, lr: float, rho: float) -> tuple[MlpModel, float]:
    """One SAM update on a batch; returns the new model and the batch loss at theta.

    epsilon = rho * g / ||g|| over the whole flattened parameter vector; the
    update gradient is taken at theta + epsilon and applied to theta.
    """
    if np.size(labels) == 0:
        raise ParameterError("SAM step needs a non-empty batch")
    loss, grads = loss_and_grad(model, x, labels)
    norm = grads.norm()
    if rho == 0.0 or norm < GRAD_NORM_GUARD:
        return sgd_step(model, grads, lr), loss
    perturbed = model.shifted(grads, rho / norm)
    _, sharp_grads = loss_and_grad(perturbed, x, labels)
    return sgd_step(model, sharp_grads, lr), loss


def train(
    dataset: Dataset,
    model: MlpModel,
    cfg: TrainConfig,
    probe: BackdoorProbe | None = None,
) -> tuple[MlpModel, TrainLog]:
    """Mini-batch training with a seeded per-epoch shuffle."""
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    x, y = dataset.flat, dataset.labels
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog(optimizer=cfg.optimizer.value)
    steps = TRAIN_STEPS_TOTAL.labels(optimizer=cfg.optimizer.value)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.optimizer is OptimizerKind.SAM:
                model, loss = sam_step(model, x[idx], y[idx], cfg.learning_rate, cfg.rho)
            else:
                loss, grads = loss_and_grad(model, x[idx], y[idx])
                model = sgd_step(model, grads, cfg.learning_rate)
            total += loss * idx.size
            steps.inc()
        epoch_loss = total / n
        if not math.isfinite(epoch_loss) or not model.is_finite():
            raise TrainingDivergedError(epoch, epoch_loss)

        clean_acc = probe.clean_accuracy(model) if probe else float("nan")
        asr = probe.attack_success_rate(model) if probe else float("nan")
        log.epochs.append(EpochRecord(epoch, epoch_loss, clean_acc, asr))
        logger.info("[%s] epoch %d/%d loss=%.4f clean_acc=%.3f asr=%.3f",
                    cfg.optimizer.value, epoch, cfg.epochs, epoch_loss, clean_acc, asr)

    if log.final is not None and probe is not None:
        CLEAN_ACCURACY.labels(optimizer=cfg.optimizer.value).set(log.final.clean_acc)
        ATTACK_SUCCESS_RATE.labels(optimizer=cfg.optimizer.value).set(log.final.asr)
    return model, log


# --- Pre-activation oracle ---
#
# f(theta) = a . relu(W x), binary cross-entropy with a sigmoid output and
# target 0, so l(f) = log(1 + e^f) and l'(f) = sigmoid(f). The condition
#   a_j relu'(h_j) < -relu(h_j) / ((1 - l'(f)) * ||grad_theta f||^2)
# marks neurons whose pre-activation <w_j, x> grows more under SAM than SGD.


@dataclass(frozen=True)
class NeuronReport:
    index: int
    active: bool
    condition: bool | None      # None when ||grad f|| = 0 (not applicable)
    delta_sam: float
    delta_sgd: float

    @property
    def sam_exceeds(self) -> bool:
        return self.delta_sam > self.delta_sgd


def _binary_grads(a: np.ndarray, w: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of l(f) = softplus(f) w.r.t. (a, W), and l'(f)."""
    h = w @ x
    act = np.maximum(h, 0.0)
    dl = float(expit(a @ act))
    grad_a = dl * act
    grad_w = dl * np.outer(a * (h > 0.0), x)
    return grad_a, grad_w, dl


def preactivation_check(
    a: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    rho: float = 1e-3,
    lr: float = 1e-3,
) -> list[NeuronReport]:
    """Compare one SAM step with one SGD step on the single sample (x, 0)."""
    a = np.asarray(a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    h = w @ x
    active = h > 0.0
    act = np.maximum(h, 0.0)
    f = float(a @ act)
    dl = float(expit(f))

    # ||grad_theta f||^2 over both layers
    grad_f_sq = float(np.sum(act ** 2) + np.sum((a * active) ** 2) * float(x @ x))

    grad_a, grad_w, _ = _binary_grads(a, w, x)
    w_sgd = w - lr * grad_w

    g_norm = math.sqrt(float(np.sum(grad_a ** 2) + np.sum(grad_w ** 2)))
    if rho == 0.0 or g_norm < GRAD_NORM_GUARD:
        w_sam = w_sgd
    else:
        a_pert = a + rho * grad_a / g_norm
        w_pert = w + rho * grad_w / g_norm
        _, sharp_w, _ = _binary_grads(a_pert, w_pert, x)
        w_sam = w - lr * sharp_w

    delta_sgd = w_sgd @ x - h
    delta_sam = w_sam @ x - h

    reports = []
    for j in range(a.size):
        if grad_f_sq == 0.0 or dl >= 1.0:
            condition = None
        else:
            bound = -act[j] / ((1.0 - dl) * grad_f_sq)
            condition = bool(a[j] * float(active[j]) < bound)
        reports.append(NeuronReport(j, bool(active[j]), condition,
                                    float(delta_sam[j]), float(delta_sgd[j])))
    return reports

