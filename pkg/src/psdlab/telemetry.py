"""Prometheus metrics for laboratory runs.

All metrics are defined here as module-level singletons.
Other modules import what they need.
"""

import logging
from pathlib import Path

from prometheus_client import (
    REGISTRY,
    Counter,
    Gauge,
    Histogram,
    disable_created_metrics,
    write_to_textfile,
)

logger = logging.getLogger(__name__)

# Keeps exposition output free of wall-clock timestamps
disable_created_metrics()

# --- Counters ---

TRAIN_STEPS_TOTAL = Counter(
    "psdlab_train_steps_total",
    "Total optimizer steps taken",
    ["optimizer"],
)

PIPELINE_RUNS_TOTAL = Counter(
    "psdlab_pipeline_runs_total",
    "Total pipeline executions",
    ["status"],
)

DETECTOR_FLAGS_TOTAL = Counter(
    "psdlab_detector_flags_total",
    "Total samples flagged by detectors",
    ["detector", "variant"],
)

SWEEP_CELLS_TOTAL = Counter(
    "psdlab_sweep_cells_total",
    "Total sweep or correlation cells executed",
    ["command"],
)

# --- Histograms ---

STAGE_DURATION_SECONDS = Histogram(
    "psdlab_stage_duration_seconds",
    "Pipeline stage execution time",
    ["stage"],
    buckets=[0.1, 0.5, 1, 5, 10, 30, 60, 300],
)

# --- Gauges ---

CLEAN_ACCURACY = Gauge(
    "psdlab_clean_accuracy",
    "Clean test accuracy of the last trained model",
    ["optimizer"],
)

ATTACK_SUCCESS_RATE = Gauge(
    "psdlab_attack_success_rate",
    "Attack success rate of the last trained model",
    ["optimizer"],
)


def export_textfile(path: Path | None) -> None:
    """Write the default registry for a node-exporter textfile collector."""
    if path is None:
        return
    try:
        write_to_textfile(str(path), REGISTRY)
        logger.info("Metrics written to %s", path)
    except OSError as e:
        logger.warning("Metrics textfile not written (%s)", e)
