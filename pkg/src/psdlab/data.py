"""Labeled image datasets and the backdoor poisoning threat model.

Images are float64 arrays of shape (n, H, W, C) with pixels in [0, 1].
A poisoned training set is D_cl with a uniformly chosen subset replaced by
triggered, relabeled copies, then shuffled.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from psdlab.errors import ConsistencyError, FormatError, GeometryError, ParameterError, PlanError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Split(str, Enum):
    TRAIN = "train"
    REFERENCE = "reference"
    TEST = "test"


class Sample(NamedTuple):
    pixels: np.ndarray
    label: int
    is_poisoned: bool
    origin_index: int


@dataclass(frozen=True)
class Dataset:
    """Ordered samples of uniform shape.

    origin_labels holds each sample's label before poisoning, which ASR
    evaluation and the all-to-all check need.
    """
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: Split = Split.TRAIN
    poisoned: np.ndarray | None = None
    origin_index: np.ndarray | None = None
    origin_labels: np.ndarray | None = None

    def __post_init__(self):
        n = self.images.shape[0]
        if self.images.ndim != 4:
            raise GeometryError(f"images must be (n, H, W, C), got {self.images.shape}")
        if self.labels.shape != (n,):
            raise ConsistencyError(f"{n} images but labels of shape {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConsistencyError(f"labels outside [0, {self.num_classes})")
        if self.poisoned is None:
            object.__setattr__(self, "poisoned", np.zeros(n, dtype=bool))
        if self.origin_index is None:
            object.__setattr__(self, "origin_index", np.arange(n, dtype=np.int64))
        if self.origin_labels is None:
            object.__setattr__(self, "origin_labels", self.labels.copy())

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            self.images[i], int(self.labels[i]), bool(self.poisoned[i]), int(self.origin_index[i])
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def flat(self) -> np.ndarray:
        """Images flattened to (n, H*W*C) for the MLP."""
        return self.images.reshape(len(self), -1)

    def subset(self, indices, split: Split | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            images=self.images[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            split=split or self.split,
            poisoned=self.poisoned[idx],
            origin_index=self.origin_index[idx],
            origin_labels=self.origin_labels[idx],
        )


class TriggerKind(str, Enum):
    PATCH = "patch"
    BLEND = "blend"


@dataclass(frozen=True)
class TriggerSpec:
    """Patch: `pattern` (m x m x C) pasted at `corner`. Blend: full-size
    `pattern` mixed in with strength `alpha`."""
    kind: TriggerKind
    pattern: np.ndarray
    corner: str = "bottom_right"
    alpha: float = 1.0

    def validate(self, shape: tuple[int, int, int]) -> None:
        h, w, c = shape
        if self.kind is TriggerKind.PATCH:
            ph, pw = self.pattern.shape[:2]
            if ph > h or pw > w or self.pattern.shape[2] != c:
                raise GeometryError(f"patch {self.pattern.shape} does not fit image {shape}")
            if self.corner not in _CORNERS:
                raise GeometryError(f"unknown corner '{self.corner}'")
        else:
            if self.pattern.shape != shape:
                raise GeometryError(f"blend pattern {self.pattern.shape} != image {shape}")
            if not 0.0 <= self.alpha <= 1.0:
                raise ParameterError(f"blend alpha must be in [0, 1], got {self.alpha}")


_CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")


def checkerboard_patch(size: int = 3, channels: int = 3) -> TriggerSpec:
    """BadNets-style bottom-right checkerboard."""
    grid = np.indices((size, size)).sum(axis=0) % 2 == 0
    pattern = np.repeat(grid[:, :, None].astype(np.float64), channels, axis=2)
    return TriggerSpec(TriggerKind.PATCH, pattern, corner="bottom_right")


def noise_blend(shape: tuple[int, int, int], alpha: float, rng: np.random.Generator) -> TriggerSpec:
    """Blend trigger with a fixed uniform-noise pattern."""
    return TriggerSpec(TriggerKind.BLEND, rng.uniform(0.0, 1.0, size=shape), alpha=alpha)


def _patch_slices(shape: tuple[int, int, int], trigger: TriggerSpec) -> tuple[slice, slice]:
    h, w, _ = shape
    ph, pw = trigger.pattern.shape[:2]
    rows = slice(0, ph) if trigger.corner.startswith("top") else slice(h - ph, h)
    cols = slice(0, pw) if trigger.corner.endswith("left") else slice(w - pw, w)
    return rows, cols


def apply_trigger(pixels: np.ndarray, trigger: TriggerSpec) -> np.ndarray:
    """x~ = g(x, trigger) for one image (H, W, C) or a batch (n, H, W, C)."""
    x = np.asarray(pixels, dtype=np.float64)
    shape = x.shape[-3:]
    trigger.validate(shape)
    if trigger.kind is TriggerKind.PATCH:
        out = x.copy()
        rows, cols = _patch_slices(shape, trigger)
        out[..., rows, cols, :] = trigger.pattern
        return out
    return np.clip((1.0 - trigger.alpha) * x + trigger.alpha * trigger.pattern, 0.0, 1.0)


class TargetRule(str, Enum):
    FIXED = "fixed"
    ALL_TO_ALL = "all_to_all"


@dataclass(frozen=True)
class PoisonPlan:
    poisoning_ratio: float
    trigger: TriggerSpec
    target_rule: TargetRule = TargetRule.FIXED
    target_label: int = 0
    seed: int = 0

    def targets(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        if self.target_rule is TargetRule.ALL_TO_ALL:
            return (labels + 1) % num_classes
        return np.full_like(labels, self.target_label)

    def eligible(self, labels: np.ndarray) -> np.ndarray:
        """Samples whose label actually flips when poisoned."""
        if self.target_rule is TargetRule.ALL_TO_ALL:
            return np.arange(labels.shape[0])
        return np.flatnonzero(labels != self.target_label)


def poison_count(ratio: float, n: int) -> int:
    # The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    return int(math.floor(ratio * n + 1e-9))


def poison_dataset(clean: Dataset, plan: PoisonPlan) -> Dataset:
    """D_tr = (D_cl minus D_sub) plus D_poi, shuffled under plan.seed."""
    if not 0.0 <= plan.poisoning_ratio < 1.0:
        raise PlanError(f"poisoning ratio must be in [0, 1), got {plan.poisoning_ratio}")
    if plan.target_rule is TargetRule.FIXED and not 0 <= plan.target_label < clean.num_classes:
        raise PlanError(f"target label {plan.target_label} outside [0, {clean.num_classes})")
    plan.trigger.validate(clean.shape)

    n = len(clean)
    count = poison_count(plan.poisoning_ratio, n)
    eligible = plan.eligible(clean.labels)
    if count > eligible.size:
        raise PlanError(f"need {count} poison sources but only {eligible.size} are eligible")

    rng = np.random.default_rng(plan.seed)
    chosen = np.sort(rng.choice(eligible, size=count, replace=False))

    images = clean.images.copy()
    labels = clean.labels.copy()
    poisoned = np.zeros(n, dtype=bool)
    if count:
        images[chosen] = apply_trigger(images[chosen], plan.trigger)
        labels[chosen] = plan.targets(clean.labels[chosen], clean.num_classes)
        poisoned[chosen] = True

    order = rng.permutation(n)
    logger.info("Poisoned %d/%d samples (ratio=%g, rule=%s)",
                count, n, plan.poisoning_ratio, plan.target_rule.value)
    return Dataset(
        images=images[order],
        labels=labels[order],
        num_classes=clean.num_classes,
        split=Split.TRAIN,
        poisoned=poisoned[order],
        origin_index=clean.origin_index[order],
        origin_labels=clean.origin_labels[order],
    )


# --- Synthetic data ---

def _class_templates(num_classes: int, shape: tuple[int, int, int]) -> np.ndarray:
    """One base image per class: a colour-ramped rectangle at a class-specific
    grid position on a dim background."""
    h, w, c = shape
    rh, rw = max(2, h // 4), max(2, w // 4)
    ncols = math.ceil(math.sqrt(num_classes))
    nrows = math.ceil(num_classes / ncols)
    templates = np.full((num_classes, h, w, c), 0.1)
    ramp = 0.7 + 0.3 * np.linspace(0.0, 1.0, rw)
    for k in range(num_classes):
        r, col = divmod(k, ncols)
        top = r * (h - rh) // max(nrows - 1, 1)
        left = col * (w - rw) // max(ncols - 1, 1)
        if top + rh > h or left + rw > w:
            raise GeometryError(f"class {k} rectangle does not fit in {h}x{w}")
        colour = 0.3 + 0.6 * ((k + np.arange(c) * num_classes / 3.0) % num_classes) / max(num_classes - 1, 1)
        templates[k, top:top + rh, left:left + rw, :] = ramp[None, :, None] * colour[None, None, :]
    return templates


def gen_synthetic(
    num_classes: int,
    per_class: int,
    shape: tuple[int, int, int] = (16, 16, 3),
    noise: float = 0.1,
    seed: int = 0,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Class templates plus i.i.d. Gaussian pixel noise, clipped to [0, 1]."""
    h, w, c = shape
    if num_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {num_classes}")
    if h < 8 or w < 8 or c < 1:
        raise GeometryError(f"images must be at least 8x8 with >=1 channel, got {shape}")
    if per_class < 1 or noise < 0:
        raise ParameterError(f"per_class={per_class} and noise={noise} must be positive")

    templates = _class_templates(num_classes, shape)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    rng = np.random.default_rng(seed)
    images = templates[labels] + noise * rng.standard_normal((labels.size, h, w, c))
    return Dataset(np.clip(images, 0.0, 1.0), labels, num_classes, split=split)


def split_reference(test: Dataset, per_class: int, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Hold out `per_class` samples of every class as the defender's clean reference set."""
    reference_idx = []
    for k in range(test.num_classes):
        members = np.flatnonzero(test.labels == k)
        take = min(per_class, members.size)
        if take < per_class:
            logger.warning("Class %d has only %d test samples for the reference set", k, members.size)
        reference_idx.append(np.sort(rng.choice(members, size=take, replace=False)))
    reference_idx = np.concatenate(reference_idx)
    rest = np.setdiff1d(np.arange(len(test)), reference_idx)
    return test.subset(reference_idx, Split.REFERENCE), test.subset(rest, Split.TEST)


# --- IDX ingestion ---

def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    expected = math.prod(dims)
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(image_path: Path, label_path: Path, num_classes: int | None = None,
             split: Split = Split.TRAIN) -> Dataset:
    """Read an IDX image/label pair (MNIST layout) into a Dataset."""
    images = _read_idx(image_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(label_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 2
    pixels = images.astype(np.float64)[..., None] / 255.0
    logger.info("Loaded %d IDX samples of shape %s from %s", len(labels), pixels.shape[1:], image_path)
    return Dataset(pixels, labels, num_classes, split=split)


# --- Manifest ---

@dataclass
class DatasetManifest:
    seed: int
    shape: tuple[int, int, int]
    num_classes: int
    plan: dict = field(default_factory=dict)
    poison_indices: list[int] = field(default_factory=list)

    @classmethod
    def describe(cls, dataset: Dataset, plan: PoisonPlan, seed: int) -> "DatasetManifest":
        return cls(
            seed=seed,
            shape=dataset.shape,
            num_classes=dataset.num_classes,
            plan=plan_summary(plan),
            poison_indices=[int(i) for i in np.flatnonzero(dataset.poisoned)],
        )

    def write(self, path: Path) -> None:
        payload = {
            "seed": self.seed,
            "shape": list(self.shape),
            "num_classes": self.num_classes,
            "plan": self.plan,
            "poison_indices": self.poison_indices,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def plan_summary(plan: PoisonPlan) -> dict:
    return {
        "poisoning_ratio": plan.poisoning_ratio,
        "target_rule": plan.target_rule.value,
        "target_label": plan.target_label,
        "trigger_kind": plan.trigger.kind.value,
        "trigger_alpha": plan.trigger.alpha,
        "trigger_corner": plan.trigger.corner,
        "seed": plan.seed,
    }


def save_npz(dataset: Dataset, path: Path) -> None:
    np.savez(
        path,
        images=dataset.images,
        labels=dataset.labels,
        poisoned=dataset.poisoned,
        origin_index=dataset.origin_index,
        origin_labels=dataset.origin_labels,
    )