"""Multi-run protocols: poisoning-ratio / rho sweeps and the backdoor-effect
correlation study.

Cells are independent pipelines; with jobs > 1 they run in a process pool
and results are merged back in cell order (axis value, then seed).
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from psdlab.analysis import tac, topk_tac
from psdlab.config import RunConfig, attack_preset
from psdlab.detectors import DetectorContext, run_detector
from psdlab.errors import ConfigError, UndefinedMetricError
from psdlab.metrics import evaluate, mean_defined, pearson, r_squared
from psdlab.model import extract_features
from psdlab.pipeline import (
    TOP_K_TAC,
    class_expected_fractions,
    expected_fraction,
    prepare,
    run_pipeline,
    stage,
    train_model,
)
from psdlab.plots import ScatterPoint, line_plot, scatter_plot
from psdlab.reports import write_csv, write_json
from psdlab.telemetry import SWEEP_CELLS_TOTAL

logger = logging.getLogger(__name__)

AXES = ("p", "rho")
SWEEP_COLUMNS = ("axis_value", "seed", "attack", "detector", "variant", "tpr", "fpr", "f1", "auc")
CORRELATION_COLUMNS = ("attack", "poisoning_ratio", "seed", "top2_tac", "detector", "auc")
MIN_CORRELATION_CELLS = 8


def _map_cells(fn, cells: list, jobs: int) -> list:
    if jobs <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


# --- Sweeps ---

def check_axis_values(axis: str, values: list[float]) -> list[float]:
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis '{axis}' (expected one of {', '.join(AXES)})")
    if not values:
        raise ConfigError("sweep needs at least one axis value")
    if any(v <= 0 for v in values):
        raise ConfigError(f"sweep values must be positive, got {values}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"sweep values must be strictly increasing, got {values}")
    if axis == "p" and any(v >= 1 for v in values):
        raise ConfigError(f"poisoning ratios must be below 1, got {values}")
    return list(values)


def sweep_cell_config(config: RunConfig, axis: str, value: float, seed: int) -> RunConfig:
    data = config.model_dump()
    data["seed"] = seed
    if axis == "p":
        data["attack"]["poisoning_ratio"] = value
    else:
        data["train"]["sam"]["rho"] = value
    return RunConfig.model_validate(data)


def _sweep_cell(cell: tuple[RunConfig, float]) -> list[dict]:
    config, axis_value = cell
    report = run_pipeline(config)
    return [{"axis_value": axis_value, **row} for row in report.metric_rows]


@dataclass
class SweepResult:
    axis: str
    values: list[float]
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)

    @property
    def runs(self) -> int:
        return len(self.values) * len(self.seeds)

    def mean_tpr(self) -> dict[str, list[tuple[float, float | None]]]:
        """'detector/variant' -> [(axis value, mean TPR over seeds)]."""
        series: dict[str, list[tuple[float, float | None]]] = {}
        keys = list(dict.fromkeys((r["detector"], r["variant"]) for r in self.rows))
        for detector, variant in keys:
            points = []
            for value in self.values:
                tprs = [r["tpr"] for r in self.rows
                        if r["detector"] == detector and r["variant"] == variant and r["axis_value"] == value]
                points.append((value, mean_defined(tprs)[0]))
            series[f"{detector}/{variant}"] = points
        return series


def run_sweep(config: RunConfig, axis: str, values: list[float], seeds: list[int], jobs: int = 1) -> SweepResult:
    values = check_axis_values(axis, values)
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    cells = [(sweep_cell_config(config, axis, v, s), v) for v in values for s in seeds]
    logger.info("Sweep over %s=%s x seeds=%s: %d runs on %d job(s)", axis, values, seeds, len(cells), jobs)
    result = SweepResult(axis, values, list(seeds))
    for rows in _map_cells(_sweep_cell, cells, jobs):
        result.rows.extend(rows)
        SWEEP_CELLS_TOTAL.labels(command="sweep").inc()
    return result


def write_sweep(result: SweepResult, out_dir: Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"sweep_{result.axis}.csv"
    svg_path = out / f"sweep_{result.axis}.svg"
    write_csv(csv_path, SWEEP_COLUMNS, result.rows)
    label = "poisoning ratio" if result.axis == "p" else "rho"
    svg_path.write_text(line_plot(result.mean_tpr(), f"Mean TPR vs {label}", label, "mean TPR"))
    logger.info("Sweep summary: %d rows -> %s", len(result.rows), csv_path)
    return [csv_path, svg_path]


# --- Correlation study ---

@dataclass
class CorrelationCell:
    attack: str
    poisoning_ratio: float
    seed: int
    top2_tac: float
    aucs: dict[str, float | None]

    @property
    def mean_auc(self) -> float | None:
        return mean_defined(list(self.aucs.values()))[0]


def correlation_configs(config: RunConfig) -> list[RunConfig]:
    grid = config.grid
    if len(grid.attacks) * len(grid.ratios) < MIN_CORRELATION_CELLS:
        raise ConfigError(f"correlation needs at least {MIN_CORRELATION_CELLS} (attack, p) cells, "
                          f"got {len(grid.attacks)} x {len(grid.ratios)}")
    return [
        config.with_overrides(
            seed=seed,
            attack=attack_preset(name, ratio, config.attack.target_label).model_dump(),
        )
        for name in grid.attacks
        for ratio in grid.ratios
        for seed in grid.seeds
    ]


def _correlation_cell(config: RunConfig) -> CorrelationCell:
    """SGD model only: Top-2 TAC and per-detector AUC on raw features."""
    prepared = prepare(config)
    trained = train_model(prepared, "sgd")
    train_set = prepared.train_set
    with stage("features"):
        features = extract_features(trained.model, train_set.images)
        reference = extract_features(trained.model, prepared.reference.images)
    with stage("analysis"):
        effect = topk_tac(tac(trained.model, prepared.reference.images, prepared.plan.trigger), TOP_K_TAC)

    eps, _ = expected_fraction(config)
    per_class = class_expected_fractions(config, train_set)
    ctx = DetectorContext(features, train_set.labels, train_set.num_classes,
                          eps if per_class is None else per_class,
                          reference, prepared.reference.labels, prepared.streams.seed("detector"))
    aucs = {}
    with stage("detect"):
        for name in config.detectors.names:
            result = run_detector(name, ctx, config.detectors.params())
            aucs[name] = evaluate(result.flags, result.scores, train_set.poisoned).auc
    logger.info("Cell %s p=%g seed=%d: top2_tac=%.4f", config.attack.name,
                config.attack.poisoning_ratio, config.seed, effect)
    return CorrelationCell(config.attack.name, config.attack.poisoning_ratio, config.seed, effect, aucs)


def _fit(xs: list[float], ys: list[float]) -> dict:
    try:
        return {"r": pearson(xs, ys), "r_squared": r_squared(xs, ys), "note": None}
    except UndefinedMetricError as e:
        logger.warning("Correlation undefined: %s", e)
        return {"r": None, "r_squared": None, "note": str(e)}


@dataclass
class CorrelationResult:
    cells: list[CorrelationCell]
    overall: dict
    per_detector: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "cells": [
                {"attack": c.attack, "poisoning_ratio": c.poisoning_ratio, "seed": c.seed,
                 "top2_tac": c.top2_tac, "aucs": c.aucs, "mean_auc": c.mean_auc}
                for c in self.cells
            ],
            "pearson_r": self.overall["r"],
            "r_squared": self.overall["r_squared"],
            "note": self.overall["note"],
            "per_detector": self.per_detector,
        }


def run_correlation(config: RunConfig, jobs: int = 1) -> CorrelationResult:
    configs = correlation_configs(config)
    logger.info("Correlation study: %d cells on %d job(s)", len(configs), jobs)
    cells = _map_cells(_correlation_cell, configs, jobs)
    SWEEP_CELLS_TOTAL.labels(command="correlate").inc(len(cells))

    defined = [c for c in cells if c.mean_auc is not None]
    overall = _fit([c.top2_tac for c in defined], [c.mean_auc for c in defined])
    per_detector = {}
    for name in config.detectors.names:
        pairs = [(c.top2_tac, c.aucs[name]) for c in cells if c.aucs.get(name) is not None]
        per_detector[name] = _fit([p[0] for p in pairs], [p[1] for p in pairs])
    return CorrelationResult(cells, overall, per_detector)


def write_correlation(result: CorrelationResult, out_dir: Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {"attack": c.attack, "poisoning_ratio": c.poisoning_ratio, "seed": c.seed,
         "top2_tac": c.top2_tac, "detector": name, "auc": value}
        for c in result.cells
        for name, value in c.aucs.items()
    ]
    paths = [out / "correlation.csv", out / "correlation.json", out / "correlation.svg"]
    write_csv(paths[0], CORRELATION_COLUMNS, rows)
    write_json(paths[1], result.to_dict())

    points = [ScatterPoint(r["top2_tac"], r["auc"], r["attack"], r["detector"])
              for r in rows if r["auc"] is not None and np.isfinite(r["auc"])]
    r_text = "n/a" if result.overall["r"] is None else f"{result.overall['r']:.3f}"
    paths[2].write_text(scatter_plot(points, f"Top-2 TAC vs AUC (r = {r_text})", "Top-2 TAC", "AUC"))
    logger.info("Correlation: r=%s over %d cells -> %s", r_text, len(result.cells), out)
    return paths
