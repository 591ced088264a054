"""Poisoned-sample detectors behind one interface.

Each detector module exposes NAME and run(ctx, params) -> DetectionResult.
"""

import logging
from collections.abc import Callable

from psdlab.detectors import ac, gram, spectre_lite, ss
from psdlab.detectors.base import ClassDiagnostic, DetectionResult, DetectorContext
from psdlab.errors import ParameterError

logger = logging.getLogger(__name__)

# Detector name -> runner. Order is the report order.
DETECTORS: dict[str, Callable[[DetectorContext, dict], DetectionResult]] = {
    ac.NAME: ac.run,
    ss.NAME: ss.run,
    spectre_lite.NAME: spectre_lite.run,
    gram.NAME: gram.run,
}


def run_detector(name: str, ctx: DetectorContext, params: dict | None = None) -> DetectionResult:
    runner = DETECTORS.get(name)
    if runner is None:
        raise ParameterError(f"unknown detector '{name}' (known: {', '.join(DETECTORS)})")
    result = runner(ctx, params or {})
    logger.info("Detector %s flagged %d/%d samples", name, result.flagged, result.flags.size)
    return result


__all__ = ["DETECTORS", "ClassDiagnostic", "DetectionResult", "DetectorContext", "run_detector"]
