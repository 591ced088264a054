"""Shared types for poisoned-sample detectors."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from psdlab.errors import ParameterError


@dataclass
class ClassDiagnostic:
    """What a detector did with one class."""
    label: int
    size: int
    flagged: int = 0
    skipped: str | None = None
    threshold: float | None = None
    cluster_sizes: list[int] | None = None
    fallback: str | None = None
    expected_fraction: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class DetectionResult:
    """Per-sample suspicion scores (higher = more suspect) and flags."""
    detector: str
    scores: np.ndarray
    flags: np.ndarray
    diagnostics: list[ClassDiagnostic] = field(default_factory=list)

    @property
    def flagged(self) -> int:
        return int(self.flags.sum())


@dataclass(frozen=True)
class DetectorContext:
    """Everything a detector may need; each one reads the fields it uses."""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    expected_fraction: float | np.ndarray = 0.05  # scalar, or one value per class
    reference_features: np.ndarray | None = None
    reference_labels: np.ndarray | None = None
    seed: int = 0


def check_fraction(eps: float) -> None:
    if not 0.0 < eps < 0.5:
        raise ParameterError(f"expected poison fraction must be in (0, 0.5), got {eps}")


def class_fractions(eps, num_classes: int) -> np.ndarray:
    """eps-hat for each class. A scalar applies to every class; a per-class
    array may hold 0 for classes known to be clean, which flags nothing there."""
    if np.ndim(eps) == 0:
        check_fraction(float(eps))
        return np.full(num_classes, float(eps))
    fractions = np.asarray(eps, dtype=np.float64)
    if fractions.shape != (num_classes,):
        raise ParameterError(f"expected {num_classes} per-class fractions, got shape {fractions.shape}")
    if np.any(fractions < 0.0) or np.any(fractions >= 0.5):
        raise ParameterError(f"per-class poison fractions must be in [0, 0.5), got {fractions.tolist()}")
    return fractions


def removal_budget(eps: float, n: int, multiplier: float = 1.5) -> int:
    """min(ceil(multiplier * eps * n), n) samples to flag in a class of size n."""
    # Rounding guard so that e.g. 1.5 * 0.1 * 100 flags 15, not 16
    return min(int(math.ceil(multiplier * eps * n - 1e-9)), n)


def flag_top(scores: np.ndarray, count: int) -> np.ndarray:
    """Boolean mask of the `count` highest scores; earlier index wins ties."""
    mask = np.zeros(scores.size, dtype=bool)
    if count > 0:
        order = np.argsort(-scores, kind="stable")
        mask[order[:count]] = True
    return mask


def write_detections_csv(path: Path, rows: list[tuple[str, DetectionResult]], labels: np.ndarray) -> None:
    """sample_index,class,score,flag,detector,variant for every (variant, result)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_index", "class", "score", "flag", "detector", "variant"])
        for variant, result in rows:
            for i, (score, flag) in enumerate(zip(result.scores, result.flags)):
                writer.writerow([i, int(labels[i]), repr(float(score)), int(flag), result.detector, variant])
