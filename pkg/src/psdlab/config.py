"""Run configuration: a JSON file validated by pydantic models.

Minimal example:

  {"schema_version": 1, "seed": 0, "attack": {"preset": "badnets", "poisoning_ratio": 0.05}}

Every section has defaults matching the desk-scale setup (10 classes of
16x16x3 images, 128 hidden units, 40 epochs, rho = 0.1).
"""

import json
import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from psdlab.data import TargetRule, TriggerKind
from psdlab.detectors import DETECTORS
from psdlab.errors import ConfigError
from psdlab.optim import OptimizerKind, TrainConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

VARIANTS = ("sgd_raw", "sgd_scaled", "sam_raw", "sam_scaled")

# Named attacks available to configs and grids.
ATTACK_PRESETS: dict[str, dict] = {
    "badnets": {"trigger": {"kind": "patch", "size": 3, "corner": "bottom_right"},
                "target_rule": "fixed"},
    "blend_strong": {"trigger": {"kind": "blend", "alpha": 0.2}, "target_rule": "fixed"},
    "blend_weak": {"trigger": {"kind": "blend", "alpha": 0.1}, "target_rule": "fixed"},
    "badnets_a2a": {"trigger": {"kind": "patch", "size": 3, "corner": "bottom_right"},
                    "target_rule": "all_to_all"},
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Section):
    source: Literal["synthetic", "idx"] = "synthetic"
    num_classes: int = Field(10, ge=2)
    train_per_class: int = Field(500, ge=1)
    test_per_class: int = Field(100, ge=2)
    reference_per_class: int = Field(50, ge=1)
    height: int = Field(16, ge=8)
    width: int = Field(16, ge=8)
    channels: int = Field(3, ge=1)
    noise: float = Field(0.1, ge=0)
    train_images: Path | None = None
    train_labels: Path | None = None
    test_images: Path | None = None
    test_labels: Path | None = None

    @model_validator(mode="after")
    def _check_source(self):
        if self.source == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(self, name)
                if path is None:
                    raise ValueError(f"{name} is required when source is 'idx'")
                if not path.is_file():
                    raise ValueError(f"{name}: file not found: {path}")
        elif self.reference_per_class >= self.test_per_class:
            raise ValueError("reference_per_class must be smaller than test_per_class")
        return self

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


class TriggerSection(_Section):
    kind: TriggerKind = TriggerKind.PATCH
    size: int = Field(3, ge=1)
    corner: Literal["top_left", "top_right", "bottom_left", "bottom_right"] = "bottom_right"
    alpha: float = Field(0.2, ge=0, le=1)


class AttackSection(_Section):
    name: str = "badnets"
    trigger: TriggerSection = TriggerSection()
    poisoning_ratio: float = Field(0.05, ge=0, lt=1)
    target_rule: TargetRule = TargetRule.FIXED
    target_label: int = Field(0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _expand_preset(cls, data):
        """{"preset": "blend_weak", ...} fills in the preset's fields; explicit fields win."""
        if isinstance(data, dict) and "preset" in data:
            data = dict(data)
            name = data.pop("preset")
            if name not in ATTACK_PRESETS:
                raise ValueError(f"unknown attack preset '{name}' (known: {', '.join(ATTACK_PRESETS)})")
            merged = {"name": name, **ATTACK_PRESETS[name]}
            merged.update(data)
            data = merged
        return data


def attack_preset(name: str, poisoning_ratio: float, target_label: int = 0) -> AttackSection:
    return AttackSection.model_validate(
        {"preset": name, "poisoning_ratio": poisoning_ratio, "target_label": target_label}
    )


class ModelSection(_Section):
    hidden: int = Field(128, ge=1)


class TrainSection(_Section):
    sgd: TrainConfig = TrainConfig(optimizer=OptimizerKind.SGD, rho=0.0)
    sam: TrainConfig = TrainConfig(optimizer=OptimizerKind.SAM, rho=0.1)

    @model_validator(mode="after")
    def _check_kinds(self):
        if self.sgd.optimizer is not OptimizerKind.SGD:
            raise ValueError("train.sgd.optimizer must be 'sgd'")
        if self.sam.optimizer is not OptimizerKind.SAM:
            raise ValueError("train.sam.optimizer must be 'sam'")
        return self


class ScalerSection(_Section):
    enabled: bool = True
    variance_target: float = Field(0.95, gt=0, le=1)
    max_dim: int = Field(64, ge=1)
    floor: float = Field(1e-6, gt=0)
    confidence: float = Field(0.95, gt=0, le=1)
    cap_per_class: int = Field(100, ge=0)
    refine: bool = False


class DetectorSection(_Section):
    names: list[str] = Field(default_factory=lambda: list(DETECTORS))
    eps_mode: Literal["evaluation", "deployment"] = "evaluation"
    deployment_fraction: float = Field(0.05, gt=0, lt=0.5)
    ac_threshold: float = Field(0.35, gt=0, lt=1)
    ac_dims: int = Field(10, ge=1)
    ss_multiplier: float = Field(1.5, gt=0)
    spectre_subspace: int = Field(8, ge=1)
    gram_target_fpr: float = Field(0.05, gt=0, lt=1)
    gram_orders: list[int] = Field(default_factory=lambda: [1, 2, 3, 4], min_length=1)

    @field_validator("names")
    @classmethod
    def _known(cls, names: list[str]) -> list[str]:
        unknown = [n for n in names if n not in DETECTORS]
        if unknown:
            raise ValueError(f"unknown detectors {unknown} (known: {', '.join(DETECTORS)})")
        if not names:
            raise ValueError("at least one detector is required")
        return names

    def params(self) -> dict:
        return self.model_dump(exclude={"names", "eps_mode", "deployment_fraction"})


class GridSection(_Section):
    attacks: list[str] = Field(default_factory=lambda: ["badnets", "blend_strong", "blend_weak"])
    ratios: list[float] = Field(default_factory=lambda: [0.005, 0.01, 0.05])
    seeds: list[int] = Field(default_factory=lambda: [0])

    @field_validator("attacks")
    @classmethod
    def _presets(cls, attacks: list[str]) -> list[str]:
        unknown = [a for a in attacks if a not in ATTACK_PRESETS]
        if unknown:
            raise ValueError(f"unknown attack presets {unknown}")
        return attacks

    @field_validator("ratios")
    @classmethod
    def _ratios(cls, ratios: list[float]) -> list[float]:
        if any(not 0.0 < r < 1.0 for r in ratios):
            raise ValueError("grid ratios must be in (0, 1)")
        return ratios


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = Field(0, ge=0)
    dataset: DatasetSection = DatasetSection()
    attack: AttackSection = AttackSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    scaler: ScalerSection = ScalerSection()
    detectors: DetectorSection = DetectorSection()
    grid: GridSection = GridSection()
    ablation: bool = False
    output_dir: Path | None = None

    @model_validator(mode="after")
    def _check_target(self):
        if self.attack.target_label >= self.dataset.num_classes:
            raise ValueError(f"attack.target_label {self.attack.target_label} "
                             f">= num_classes {self.dataset.num_classes}")
        return self

    def variants(self) -> list[str]:
        if self.ablation:
            return list(VARIANTS)
        return ["sgd_raw", "sam_scaled" if self.scaler.enabled else "sam_raw"]

    def with_overrides(self, **updates) -> "RunConfig":
        """Copy with top-level fields replaced and re-validated."""
        data = self.model_dump()
        data.update(updates)
        return RunConfig.model_validate(data)


def load_config(path: Path) -> RunConfig:
    """Parse and validate a config file; ValidationError propagates for field-level reporting."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.model_validate(raw)


def format_validation_error(err: ValidationError) -> list[str]:
    """One 'field.path: message' line per problem."""
    lines = []
    for item in err.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<root>"
        lines.append(f"{loc}: {item['msg']}")
    return lines
