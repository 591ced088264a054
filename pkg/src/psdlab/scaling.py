"""Feature scaling g_s = Sigma^{-1/2} P g.

P comes from PCA on all training features; Sigma is the covariance of the
P-projected clean pool (reference set plus confidently-predicted training
samples). Serialized as:

  b"SCAL" | u32 version | u32 d | u32 d' | f64 floor | P (d x d') | Sigma^{-1/2} (d' x d')

little-endian throughout.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from psdlab.data import Dataset
from psdlab.errors import FormatError, ShapeError
from psdlab.linalg import DEFAULT_FLOOR, as_matrix, covariance, inv_sqrt, pca_fit
from psdlab.model import MlpModel, predict_proba

logger = logging.getLogger(__name__)

SCALER_MAGIC = b"SCAL"
SCALER_VERSION = 1
_HEADER = struct.Struct("<4sIIId")

DEFAULT_CONFIDENCE = 0.95
DEFAULT_CAP = 100


@dataclass(frozen=True)
class ScalerState:
    projection: np.ndarray        # P, d x d'
    sigma_inv_sqrt: np.ndarray    # d' x d'
    floor: float = DEFAULT_FLOOR
    degenerate: bool = False

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[1]


def collect_potential_clean(
    model: MlpModel,
    dataset: Dataset,
    cap_per_class: int = DEFAULT_CAP,
    confidence: float = DEFAULT_CONFIDENCE,
) -> np.ndarray:
    """Indices whose prediction matches the label with softmax confidence >= threshold,
    at most cap_per_class per class, most confident first."""
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64)
    proba = predict_proba(model, dataset.flat)
    predicted = np.argmax(proba, axis=1)
    conf = proba[np.arange(len(dataset)), dataset.labels]
    selected = []
    for c in range(dataset.num_classes):
        candidates = np.flatnonzero((dataset.labels == c) & (predicted == c) & (conf >= confidence))
        # Highest confidence first; index order breaks ties
        ranked = candidates[np.lexsort((candidates, -conf[candidates]))]
        selected.append(ranked[:cap_per_class])
    chosen = np.sort(np.concatenate(selected)).astype(np.int64)
    logger.info("Collected %d potential clean samples (threshold=%.2f, cap=%d/class)",
                chosen.size, confidence, cap_per_class)
    return chosen


def fit_scaler(
    train_features,
    clean_features,
    variance_target: float = 0.95,
    max_dim: int = 64,
    floor: float = DEFAULT_FLOOR,
) -> ScalerState:
    train = as_matrix(train_features, "train features")
    clean = as_matrix(clean_features, "clean features")
    if clean.shape[0] < 2:
        raise ShapeError(f"need at least 2 clean rows to estimate a covariance, got {clean.shape[0]}")
    if clean.shape[1] != train.shape[1]:
        raise ShapeError(f"clean features have {clean.shape[1]} columns, train has {train.shape[1]}")

    pca = pca_fit(train, variance_target, max_dim)
    projected = clean @ pca.projection
    if clean.shape[0] < 10 * projected.shape[1]:
        logger.warning("Clean pool of %d rows is small for %d whitened dimensions",
                       clean.shape[0], projected.shape[1])
    sigma = covariance(projected)
    state = ScalerState(pca.projection, inv_sqrt(sigma, floor), floor, pca.degenerate)
    logger.info("Scaler fitted: d=%d -> d'=%d on %d clean rows",
                state.input_dim, state.output_dim, clean.shape[0])
    return state


def scale(state: ScalerState, g) -> np.ndarray:
    """Apply Sigma^{-1/2} P to one feature vector or each row of a matrix."""
    arr = np.asarray(g, dtype=np.float64)
    if arr.shape[-1] != state.input_dim or arr.ndim not in (1, 2):
        raise ShapeError(f"expected features of length {state.input_dim}, got shape {arr.shape}")
    return (arr @ state.projection) @ state.sigma_inv_sqrt


def save_scaler(state: ScalerState, path: Path) -> None:
    header = _HEADER.pack(SCALER_MAGIC, SCALER_VERSION, state.input_dim, state.output_dim, state.floor)
    body = state.projection.astype("<f8").tobytes() + state.sigma_inv_sqrt.astype("<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_scaler(path: Path) -> ScalerState:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated scaler header")
    magic, version, d, dp, floor = _HEADER.unpack_from(raw)
    if magic != SCALER_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SCALER_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != _HEADER.size + 8 * (d * dp + dp * dp):
        raise FormatError(f"{path}: body length does not match d={d}, d'={dp}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    projection = values[:d * dp].reshape(d, dp).copy()
    sigma = values[d * dp:].reshape(dp, dp).copy()
    return ScalerState(projection, sigma, floor)
