"""Spectral Signature: squared projection on the top singular direction."""

import logging

import numpy as np

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

NAME = "ss"
REMOVAL_MULTIPLIER = 1.5


def class_scores(x: np.ndarray, seed: int) -> np.ndarray:
    """<g - mu, v>^2 with v the top right singular vector of the centered class."""
    centered = x - x.mean(axis=0)
    v = top_singular_directions(centered, 1, seed=seed)[:, 0]
    return (centered @ v) ** 2


def detect_ss(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    expected_fraction: float | np.ndarray,
    seed: int = 0,
    multiplier: float = REMOVAL_MULTIPLIER,
) -> DetectionResult:
    fractions = class_fractions(expected_fraction, num_classes)
    n = features.shape[0]
    scores = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    diagnostics = []

    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        diag = ClassDiagnostic(label=c, size=int(members.size), expected_fraction=float(fractions[c]))
        diagnostics.append(diag)
        if members.size < 2:
            diag.skipped = "fewer than 2 samples"
            logger.warning("SS: class %d skipped (%d samples)", c, members.size)
            continue
        class_score = class_scores(features[members], seed)
        budget = removal_budget(fractions[c], members.size, multiplier)
        mask = flag_top(class_score, budget)
        scores[members] = class_score
        flags[members[mask]] = True
        diag.flagged = budget
        diag.threshold = float(class_score[mask].min()) if budget else None

    return DetectionResult(NAME, scores, flags, diagnostics)


def run(ctx: DetectorContext, params: dict) -> DetectionResult:
    return detect_ss(ctx.features, ctx.labels, ctx.num_classes, ctx.expected_fraction,
                     seed=ctx.seed, multiplier=params.get("ss_multiplier", REMOVAL_MULTIPLIER))
