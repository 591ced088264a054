"""Backdoor-effect measurements on a trained model and its features."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import pearsonr
from sklearn.metrics import silhouette_score

from psdlab.data import TriggerSpec, apply_trigger
from psdlab.errors import GroupingError, ParameterError, ReferenceSetError
from psdlab.model import MlpModel, extract_features

logger = logging.getLogger(__name__)

HIDDEN_LAYER = "hidden"


@dataclass(frozen=True)
class TacProfile:
    """Per-neuron trigger-activated change on one layer."""
    values: np.ndarray
    layer: str
    clean_size: int

    def __len__(self) -> int:
        return self.values.size


def tac(model: MlpModel, clean_images: np.ndarray, trigger: TriggerSpec,
        layer: str = HIDDEN_LAYER) -> TacProfile:
    """Mean |phi_k(x) - phi_k(x~)| over the clean set, per hidden neuron."""
    if layer != HIDDEN_LAYER:
        raise ParameterError(f"only the '{HIDDEN_LAYER}' layer is available, got '{layer}'")
    if len(clean_images) == 0:
        raise ParameterError("TAC needs a non-empty clean set")
    clean = extract_features(model, clean_images)
    triggered = extract_features(model, apply_trigger(clean_images, trigger))
    values = np.mean(np.abs(clean - triggered), axis=0)
    return TacProfile(values, layer, len(clean_images))


def topk_tac(profile: TacProfile, k: int = 2) -> float:
    """Mean of the k largest TAC values (the backdoor effect)."""
    if k < 1 or k > len(profile):
        raise ParameterError(f"k={k} outside [1, {len(profile)}]")
    return float(np.mean(np.sort(profile.values)[::-1][:k]))


def weight_norms(model: MlpModel) -> np.ndarray:
    """Incoming-weight norm of each hidden neuron."""
    return np.linalg.norm(model.w1, axis=1)


@dataclass(frozen=True)
class TacWeightStudy:
    neurons: np.ndarray          # indices of the top neurons by TAC
    mean_tac: float
    mean_weight_norm: float
    correlation: float | None    # None when either side is constant


def tac_weight_study(profile: TacProfile, norms: np.ndarray, fraction: float = 0.2) -> TacWeightStudy:
    """Relate TAC and weight norm over the top `fraction` neurons by TAC."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    count = max(1, int(round(fraction * len(profile))))
    top = np.argsort(-profile.values, kind="stable")[:count]
    t, w = profile.values[top], norms[top]
    corr = None
    if count >= 2 and np.ptp(t) > 0 and np.ptp(w) > 0:
        corr = float(pearsonr(t, w)[0])
    return TacWeightStudy(top, float(t.mean()), float(w.mean()), corr)


def write_tac_csv(path: Path, profiles: dict[str, tuple[TacProfile, np.ndarray]]) -> None:
    """Rows of model,neuron_index,tac,weight_norm for each named model."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "neuron_index", "tac", "weight_norm"])
        for name, (profile, norms) in profiles.items():
            for j, (t, w) in enumerate(zip(profile.values, norms)):
                writer.writerow([name, j, repr(float(t)), repr(float(w))])


def intra_class_variance(features: np.ndarray, labels: np.ndarray, num_classes: int | None = None) -> np.ndarray:
    """Per class: mean over dimensions of the population variance of its rows."""
    labels = np.asarray(labels)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    out = np.zeros(k)
    for c in range(k):
        rows = features[labels == c]
        if rows.shape[0] == 0:
            raise GroupingError(f"class {c} has no samples")
        if rows.shape[0] == 1:
            logger.warning("Class %d has a single sample; variance set to 0", c)
            continue
        out[c] = float(np.mean(np.var(rows, axis=0)))
    return out


def silhouette(features: np.ndarray, grouping: np.ndarray) -> float:
    """Euclidean silhouette coefficient of a binary grouping."""
    grouping = np.asarray(grouping, dtype=bool)
    if grouping.all() or not grouping.any():
        raise GroupingError("both groups need at least one point")
    if grouping.size < 3:
        raise GroupingError(f"silhouette needs at least 3 points, got {grouping.size}")
    return float(silhouette_score(features, grouping.astype(np.int64), metric="euclidean"))


@dataclass(frozen=True)
class CenterDistances:
    clean: np.ndarray
    poisoned: np.ndarray

    def summary(self) -> dict:
        def stats(d: np.ndarray) -> dict:
            if d.size == 0:
                return {"count": 0, "mean": None, "median": None}
            return {"count": int(d.size), "mean": float(d.mean()), "median": float(np.median(d))}
        return {"clean": stats(self.clean), "poisoned": stats(self.poisoned)}


def center_distances(features: np.ndarray, labels: np.ndarray, target_class: int,
                     poisoned: np.ndarray) -> CenterDistances:
    """Distances to the mean feature of the clean target-class samples."""
    poisoned = np.asarray(poisoned, dtype=bool)
    clean_target = (np.asarray(labels) == target_class) & ~poisoned
    if not clean_target.any():
        raise ReferenceSetError(f"class {target_class} has no clean members")
    center = features[clean_target].mean(axis=0)
    return CenterDistances(
        clean=np.linalg.norm(features[clean_target] - center, axis=1),
        poisoned=np.linalg.norm(features[poisoned] - center, axis=1),
    )
