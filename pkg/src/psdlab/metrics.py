"""Detection quality (TPR, FPR, F1, AUC) and correlation statistics.

Undefined ratios (0/0) are reported as None, never as 0.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import pearsonr, rankdata

from psdlab.errors import ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class MetricReport:
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: float | None
    fpr: float | None
    f1: float | None
    auc: float | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion(flags, truth) -> MetricReport:
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape:
        raise ShapeError(f"{flags.size} flags but {truth.size} ground-truth labels")
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    fn = int(np.sum(~flags & truth))
    tn = int(np.sum(~flags & ~truth))
    return MetricReport(
        tp=tp, fp=fp, tn=tn, fn=fn,
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
    )


def auc(scores, truth) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise ShapeError(f"{scores.size} scores but {truth.size} labels")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores, method="average")
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(flags, scores, truth) -> MetricReport:
    """Confusion counts plus AUC (None when only one class is present)."""
    report = confusion(flags, truth)
    try:
        value = auc(scores, truth)
    except UndefinedMetricError:
        value = None
    return MetricReport(**{**report.to_dict(), "auc": value})


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise UndefinedMetricError("pearson needs at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedMetricError("pearson is undefined for zero-variance input")
    return float(pearsonr(x, y)[0])


def r_squared(x, y) -> float:
    """R^2 of the least-squares line of y on x (= r^2)."""
    return pearson(x, y) ** 2


def mean_defined(values) -> tuple[float | None, int]:
    """Mean of the non-None values and how many were skipped."""
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    return (float(np.mean(kept)) if kept else None), skipped
