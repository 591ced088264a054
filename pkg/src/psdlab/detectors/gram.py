"""Gram-statistics detector (simplified Beatrix).

For each order q the statistic s_q(g) = mean(|g|^q) is compared with the
reference clean distribution of the same class through a median/MAD
deviation. The per-class threshold is the (1 - target_fpr) quantile of the
reference scores, so clean samples are flagged at roughly target_fpr.
"""

import logging

import numpy as np

from psdlab.detectors.base import ClassDiagnostic, DetectionResult, DetectorContext
from psdlab.errors import ParameterError, ReferenceSetError

logger = logging.getLogger(__name__)

NAME = "gram"
ORDERS = (1, 2, 3, 4)
TARGET_FPR = 0.05
MAD_EPSILON = 1e-12


def gram_statistics(features: np.ndarray, orders=ORDERS) -> np.ndarray:
    """(n, len(orders)) matrix of mean |g|^q per row."""
    magnitude = np.abs(features)
    return np.column_stack([np.mean(magnitude ** q, axis=1) for q in orders])


def deviation_scores(stats: np.ndarray, median: np.ndarray, mad: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(stats - median) / (mad + MAD_EPSILON), axis=1)


def detect_gram(
    features: np.ndarray,
    labels: np.ndarray,
    reference_features: np.ndarray,
    reference_labels: np.ndarray,
    num_classes: int,
    target_fpr: float = TARGET_FPR,
    orders=ORDERS,
) -> DetectionResult:
    if not 0.0 < target_fpr < 1.0:
        raise ParameterError(f"target_fpr must be in (0, 1), got {target_fpr}")
    if not orders:
        raise ParameterError("at least one Gram order is required")
    n = features.shape[0]
    scores = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    diagnostics = []
    stats = gram_statistics(features, orders)
    ref_stats = gram_statistics(reference_features, orders)

    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        diag = ClassDiagnostic(label=c, size=int(members.size))
        diagnostics.append(diag)
        if members.size == 0:
            continue
        ref = ref_stats[reference_labels == c]
        if ref.shape[0] == 0:
            raise ReferenceSetError(f"no reference clean samples for class {c}")

        median = np.median(ref, axis=0)
        mad = np.median(np.abs(ref - median), axis=0)
        threshold = float(np.quantile(deviation_scores(ref, median, mad), 1.0 - target_fpr))
        class_score = deviation_scores(stats[members], median, mad)
        hit = class_score > threshold
        scores[members] = class_score
        flags[members[hit]] = True
        diag.threshold = threshold
        diag.flagged = int(hit.sum())

    return DetectionResult(NAME, scores, flags, diagnostics)


def run(ctx: DetectorContext, params: dict) -> DetectionResult:
    if ctx.reference_features is None or ctx.reference_labels is None:
        raise ReferenceSetError("the gram detector needs reference clean features")
    return detect_gram(ctx.features, ctx.labels, ctx.reference_features, ctx.reference_labels,
                       ctx.num_classes,
                       target_fpr=params.get("gram_target_fpr", TARGET_FPR),
                       orders=tuple(params.get("gram_orders", ORDERS)))
