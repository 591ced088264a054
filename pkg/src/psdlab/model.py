"""Two-layer ReLU network with hand-written forward and backward passes.

hidden = ReLU(W1 x + b1) is the feature extractor phi; logits = W2 hidden + b2.
Checkpoints use the MODL binary layout:

  b"MODL" | u32 version | u32 d | u32 m | u32 K | W1 | b1 | W2 | b2

with all integers and float64 values little-endian.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from psdlab.errors import FormatError, ShapeError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MODL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class ParameterSet:
    """W1 (m x d), b1 (m), W2 (K x m), b2 (K)."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def vector(self) -> np.ndarray:
        """All parameters flattened in checkpoint order."""
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class MlpModel(ParameterSet):

    def __post_init__(self):
        m, d = self.w1.shape
        k = self.w2.shape[0]
        if self.b1.shape != (m,) or self.w2.shape != (k, m) or self.b2.shape != (k,):
            raise ShapeError(
                f"inconsistent shapes w1={self.w1.shape} b1={self.b1.shape} "
                f"w2={self.w2.shape} b2={self.b2.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]

    def shifted(self, direction: ParameterSet, scale: float) -> "MlpModel":
        """theta + scale * direction, as a new model."""
        return MlpModel(*(p + scale * g for p, g in zip(self.arrays(), direction.arrays())))

    @classmethod
    def zeros(cls, d: int, m: int, k: int) -> "MlpModel":
        return cls(np.zeros((m, d)), np.zeros(m), np.zeros((k, m)), np.zeros(k))


@dataclass(frozen=True)
class Gradients(ParameterSet):
    """Gradient of the mean cross-entropy, shaped like the model."""

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(*(a * factor for a in self.arrays()))


def init_model(d: int, m: int, k: int, rng: np.random.Generator) -> MlpModel:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
    r1, r2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(m)
    return MlpModel(
        w1=rng.uniform(-r1, r1, size=(m, d)),
        b1=rng.uniform(-r1, r1, size=m),
        w2=rng.uniform(-r2, r2, size=(k, m)),
        b2=rng.uniform(-r2, r2, size=k),
    )


def _batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != model.input_dim:
        raise ShapeError(f"expected inputs of length {model.input_dim}, got shape {np.shape(x)}")
    return arr, single


def forward(model: MlpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """(hidden, logits) for one flattened input or a batch of rows."""
    arr, single = _batch(model, x)
    hidden = np.maximum(arr @ model.w1.T + model.b1, 0.0)
    logits = hidden @ model.w2.T + model.b2
    if single:
        return hidden[0], logits[0]
    return hidden, logits


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (n,):
        raise ShapeError(f"{n} inputs but {y.size} labels")
    if n and (y.min() < 0 or y.max() >= k):
        raise ShapeError(f"labels must be in [0, {k}), got range [{y.min()}, {y.max()}]")
    return y


def loss_ce(logits, labels) -> float:
    """-log softmax(logits)[label], averaged over a batch."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _check_labels(labels, z.shape[0], z.shape[1])
    logp = log_softmax(z, axis=1)
    return float(-np.mean(logp[np.arange(y.size), y]))


def predict_proba(model: MlpModel, x) -> np.ndarray:
    _, logits = forward(model, x)
    return softmax(logits, axis=-1)


def predict(model: MlpModel, x) -> np.ndarray:
    _, logits = forward(model, x)
    return np.argmax(logits, axis=-1)


def loss_and_grad(model: MlpModel, x, labels) -> tuple[float, Gradients]:
    """Mean cross-entropy over the batch and its exact gradient.

    The ReLU derivative at exactly zero is taken as 0.
    """
    arr, _ = _batch(model, x)
    n = arr.shape[0]
    y = _check_labels(labels, n, model.num_classes)

    pre = arr @ model.w1.T + model.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ model.w2.T + model.b2
    logp = log_softmax(logits, axis=1)
    loss = float(-np.mean(logp[np.arange(n), y]))

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dpre = (dlogits @ model.w2) * (pre > 0.0)
    grads = Gradients(
        w1=dpre.T @ arr,
        b1=dpre.sum(axis=0),
        w2=dlogits.T @ hidden,
        b2=dlogits.sum(axis=0),
    )
    return loss, grads


def backward(model: MlpModel, x, labels) -> Gradients:
    return loss_and_grad(model, x, labels)[1]


def extract_features(model: MlpModel, images: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Hidden activations, one row per sample (images may be (n, H, W, C) or flat)."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    rows = [forward(model, flat[i:i + batch_size])[0] for i in range(0, flat.shape[0], batch_size)]
    if not rows:
        return np.zeros((0, model.hidden))
    return np.vstack(rows)


# --- Checkpoints ---

def checkpoint_bytes(model: MlpModel) -> bytes:
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                          model.input_dim, model.hidden, model.num_classes)
    return header + b"".join(a.astype("<f8").tobytes() for a in model.arrays())


def model_digest(model: MlpModel) -> str:
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def save_checkpoint(model: MlpModel, path: Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))
    logger.debug("Checkpoint written to %s", path)


def load_checkpoint(path: Path) -> MlpModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, d, m, k = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    shapes = [(m, d), (m,), (k, m), (k,)]
    sizes = [int(np.prod(s)) for s in shapes]
    if len(raw) != _HEADER.size + 8 * sum(sizes):
        raise FormatError(f"{path}: expected {sum(sizes)} parameters")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    arrays, start = [], 0
    for shape, size in zip(shapes, sizes):
        arrays.append(values[start:start + size].reshape(shape).copy())
        start += size
    return MlpModel(*arrays)
