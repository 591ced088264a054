"""Run artifacts on disk.

Feature dumps are

  b"FEAT" | u32 version | u32 n | u32 d | f64 rows (n x d, row-major)

little-endian, with a sibling JSON manifest {labels, poison_flags, variant}.
Everything written here depends only on (config, seed): no timestamps,
sorted JSON keys, repr-formatted floats.
"""

import csv
import json
import logging
import math
import struct
from pathlib import Path

import numpy as np

from psdlab.analysis import write_tac_csv
from psdlab.data import DatasetManifest
from psdlab.detectors.base import write_detections_csv
from psdlab.errors import FormatError
from psdlab.model import save_checkpoint
from psdlab.plots import ScatterPoint, pca_scatter, scatter_plot
from psdlab.scaling import save_scaler

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"FEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

METRIC_COLUMNS = ("attack", "detector", "variant", "tpr", "fpr", "f1", "auc", "seed")
NOT_AVAILABLE = "n/a"


def format_value(value) -> str:
    """CSV cell: n/a for undefined metrics, repr for floats."""
    if value is None:
        return NOT_AVAILABLE
    if isinstance(value, float):
        return NOT_AVAILABLE if not math.isfinite(value) else repr(value)
    return str(value)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) for c in columns])


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    write_csv(path, METRIC_COLUMNS, rows)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def write_json(path: Path, payload: dict) -> None:
    """Sorted keys, NaN/inf stored as null."""
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_features(path: Path, features: np.ndarray, labels: np.ndarray, poisoned: np.ndarray,
                   variant: str) -> None:
    matrix = np.ascontiguousarray(features, dtype="<f8")
    n, d = matrix.shape
    Path(path).write_bytes(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d) + matrix.tobytes())
    write_json(Path(path).with_suffix(".json"), {
        "labels": [int(v) for v in labels],
        "poison_flags": [bool(v) for v in poisoned],
        "variant": variant,
    })


def read_features(path: Path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != _HEADER.size + 8 * n * d:
        raise FormatError(f"{path}: body length does not match n={n}, d={d}")
    matrix = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, d).astype(np.float64)
    manifest = json.loads(Path(path).with_suffix(".json").read_text())
    return matrix, manifest


def tac_weight_plot(tac_profiles: dict) -> str:
    points = [
        ScatterPoint(float(t), float(w), color_key=name, shape_key=name)
        for name, (profile, norms) in tac_profiles.items()
        for t, w in zip(profile.values, norms)
    ]
    return scatter_plot(points, "TAC vs incoming weight norm", "TAC", "weight norm")


def write_run_artifacts(report, out_dir: Path) -> list[Path]:
    """Write every file of a `run` into out_dir; returns the paths written."""
    out = Path(out_dir)
    for sub in ("checkpoints", "features", "scalers", "plots"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    prepared = report.prepared
    train_set = prepared.train_set
    written = []

    def track(path: Path) -> Path:
        written.append(path)
        return path

    write_json(track(out / "report.json"), report.payload)
    write_metrics_csv(track(out / "metrics.csv"), report.metric_rows)
    write_detections_csv(
        track(out / "detections.csv"),
        [(v.name, r) for v in report.variants.values() for r in v.results],
        train_set.labels,
    )
    write_tac_csv(track(out / "tac.csv"), report.tac_profiles)
    DatasetManifest.describe(train_set, prepared.plan, prepared.config.seed).write(track(out / "dataset.json"))

    for name, trained in report.models.items():
        trained.log.write_csv(track(out / f"train_{name}.csv"))
        save_checkpoint(trained.model, track(out / "checkpoints" / f"{name}.modl"))
    for name, fitted in report.scalers.items():
        save_scaler(fitted.state, track(out / "scalers" / f"{name}.scal"))
    for variant in report.variants.values():
        write_features(track(out / "features" / f"{variant.name}.feat"),
                       variant.features, train_set.labels, train_set.poisoned, variant.name)
        svg = pca_scatter(variant.features, train_set.poisoned, f"PCA of {variant.name} features")
        track(out / "plots" / f"pca_{variant.name}.svg").write_text(svg)
    track(out / "plots" / "tac_weight.svg").write_text(tac_weight_plot(report.tac_profiles))

    logger.info("Wrote %d artifacts to %s", len(written), out)
    return written


def summarize_report(payload: dict) -> str:
    """Plain-text metrics table for `inspect`."""
    lines = [
        f"schema_version={payload.get('schema_version')} seed={payload.get('seed')} "
        f"attack={payload.get('attack', {}).get('name')} "
        f"p={payload.get('attack', {}).get('poisoning_ratio')}",
        f"expected_fraction={payload.get('expected_fraction', {}).get('value')} "
        f"({payload.get('expected_fraction', {}).get('mode')})",
    ]
    top2 = payload.get("analysis", {}).get("top2_tac", {})
    if top2:
        lines.append("top2_tac " + " ".join(f"{k}={format_value(v)}" for k, v in sorted(top2.items())))
    lines.append(f"{'detector':<14}{'variant':<12}{'tpr':>8}{'fpr':>8}{'f1':>8}{'auc':>8}")
    for row in payload.get("metrics", []):
        cells = []
        for key in ("tpr", "fpr", "f1", "auc"):
            value = row.get(key)
            cells.append(f"{NOT_AVAILABLE:>8}" if value is None else f"{value:>8.3f}")
        lines.append(f"{row['detector']:<14}{row['variant']:<12}" + "".join(cells))
    return "\n".join(lines)
