"""Trimmed spectral scoring with robust whitening.

A simplified stand-in for Spectre: the center and the top-k subspace are
re-estimated three times, each time dropping the top 10% scorers, and the
final score is the squared norm of the whitened projection on that robust
subspace. No QUE scoring.
"""

import logging

import numpy as np

from psdlab.detectors.ss import NAME as SS_NAME, REMOVAL_MULTIPLIER, class_scores
from psdlab.detectors.base import (
    ClassDiagnostic,
    DetectionResult,
    DetectorContext,
    class_fractions,
    flag_top,
    removal_budget,
)
from psdlab.linalg import top_singular_directions

logger = logging.getLogger(__name__)

NAME = "spectre_lite"
SUBSPACE_K = 8
TRIM_FRACTION = 0.10
ITERATIONS = 3
VARIANCE_FLOOR = 1e-6


def _robust_scores(x: np.ndarray, k: int, seed: int) -> np.ndarray | None:
    """Scores from the trimmed estimate, or None when too few rows survive."""
    kept = np.arange(x.shape[0])
    for iteration in range(ITERATIONS + 1):
        if kept.size <= k:
            return None
        base = x[kept]
        mu = base.mean(axis=0)
        directions = top_singular_directions(base - mu, k, seed=seed)
        variances = np.maximum(np.sum(((base - mu) @ directions) ** 2, axis=0) / (kept.size - 1),
                               VARIANCE_FLOOR)
        scores = np.sum(((x - mu) @ directions) ** 2 / variances, axis=1)
        if iteration == ITERATIONS:
            return scores
        drop = int(np.ceil(TRIM_FRACTION * kept.size))
        order = np.argsort(scores[kept], kind="stable")
        kept = np.sort(kept[order[:kept.size - drop]])
    return None  # unreachable: the last iteration returns


def detect_spectre_lite(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    expected_fraction: float | np.ndarray,
    subspace_k: int = SUBSPACE_K,
    seed: int = 0,
    multiplier: float = REMOVAL_MULTIPLIER,
) -> DetectionResult:
    fractions = class_fractions(expected_fraction, num_classes)
    n, d = features.shape
    scores = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    diagnostics = []

    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        diag = ClassDiagnostic(label=c, size=int(members.size), expected_fraction=float(fractions[c]))
        diagnostics.append(diag)
        if members.size < 2:
            diag.skipped = "fewer than 2 samples"
            logger.warning("Spectre-lite: class %d skipped (%d samples)", c, members.size)
            continue

        x = features[members]
        k = max(1, min(subspace_k, d, members.size - 1))
        class_score = _robust_scores(x, k, seed)
        if class_score is None:
            diag.fallback = SS_NAME
            logger.warning("Spectre-lite: class %d too small after trimming, using SS", c)
            class_score = class_scores(x, seed)

        budget = removal_budget(fractions[c], members.size, multiplier)
        mask = flag_top(class_score, budget)
        scores[members] = class_score
        flags[members[mask]] = True
        diag.flagged = budget
        diag.threshold = float(class_score[mask].min()) if budget else None

    return DetectionResult(NAME, scores, flags, diagnostics)


def run(ctx: DetectorContext, params: dict) -> DetectionResult:
    return detect_spectre_lite(ctx.features, ctx.labels, ctx.num_classes, ctx.expected_fraction,
                               subspace_k=params.get("spectre_subspace", SUBSPACE_K), seed=ctx.seed,
                               multiplier=params.get("ss_multiplier", REMOVAL_MULTIPLIER))
