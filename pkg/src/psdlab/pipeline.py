"""End-to-end poisoned-sample detection run.

poison -> train SGD and SAM twins from one init -> extract features ->
fit/apply the feature scaler -> run each detector on each variant ->
score against ground truth -> backdoor-effect and feature diagnostics.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from psdlab.analysis import (
    TacProfile,
    center_distances,
    intra_class_variance,
    silhouette,
    tac,
    tac_weight_study,
    topk_tac,
    weight_norms,
)
from psdlab.config import SCHEMA_VERSION, RunConfig
from psdlab.data import (
    Dataset,
    PoisonPlan,
    Split,
    TargetRule,
    TriggerKind,
    TriggerSpec,
    apply_trigger,
    checkerboard_patch,
    gen_synthetic,
    load_idx,
    noise_blend,
    plan_summary,
    poison_dataset,
    split_reference,
)
from psdlab.detectors import DetectionResult, DetectorContext, run_detector
from psdlab.detectors.ss import detect_ss
from psdlab.errors import GroupingError, PsdLabError, ReferenceSetError, StageError
from psdlab.metrics import MetricReport, evaluate
from psdlab.model import MlpModel, extract_features, init_model, model_digest
from psdlab.optim import BackdoorProbe, TrainLog, train
from psdlab.scaling import ScalerState, collect_potential_clean, fit_scaler, scale
from psdlab.seeding import SeedStreams
from psdlab.telemetry import DETECTOR_FLAGS_TOTAL, PIPELINE_RUNS_TOTAL, STAGE_DURATION_SECONDS

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sam")
TOP_K_TAC = 2


@contextmanager
def stage(name: str):
    """Time a stage and relabel anything it raises as a StageError."""
    start = time.perf_counter()
    logger.info("Stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error("Stage %s failed: %s", name, e)
        raise StageError(name, e) from e
    finally:
        STAGE_DURATION_SECONDS.labels(stage=name).observe(time.perf_counter() - start)
    logger.info("Stage %s: done in %.2fs", name, time.perf_counter() - start)


# --- Stage 0: data ---

@dataclass
class Prepared:
    """Poisoned training set, held-out splits and the shared initialisation."""
    config: RunConfig
    streams: SeedStreams
    plan: PoisonPlan
    train_set: Dataset
    reference: Dataset
    evaluation: Dataset
    probe: BackdoorProbe
    init: MlpModel


def build_trigger(config: RunConfig, shape: tuple[int, int, int], streams: SeedStreams) -> TriggerSpec:
    section = config.attack.trigger
    if section.kind is TriggerKind.PATCH:
        patch = checkerboard_patch(section.size, shape[2])
        return TriggerSpec(patch.kind, patch.pattern, corner=section.corner)
    return noise_blend(shape, section.alpha, streams.generator("trigger"))


def load_splits(config: RunConfig, streams: SeedStreams) -> tuple[Dataset, Dataset, Dataset]:
    """(clean train, reference, evaluation)."""
    ds = config.dataset
    if ds.source == "idx":
        train_clean = load_idx(ds.train_images, ds.train_labels, ds.num_classes, Split.TRAIN)
        test = load_idx(ds.test_images, ds.test_labels, ds.num_classes, Split.TEST)
    else:
        train_clean = gen_synthetic(ds.num_classes, ds.train_per_class, ds.shape, ds.noise,
                                    seed=streams.seed("dataset"), split=Split.TRAIN)
        test = gen_synthetic(ds.num_classes, ds.test_per_class, ds.shape, ds.noise,
                             seed=streams.seed("test"), split=Split.TEST)
    reference, evaluation = split_reference(test, ds.reference_per_class, streams.generator("reference"))
    return train_clean, reference, evaluation


def build_probe(evaluation: Dataset, plan: PoisonPlan) -> BackdoorProbe:
    """Clean evaluation samples plus triggered copies of those whose label would flip."""
    targets = plan.targets(evaluation.labels, evaluation.num_classes)
    flip = targets != evaluation.labels
    triggered = apply_trigger(evaluation.images[flip], plan.trigger) if flip.any() else evaluation.images[flip]
    return BackdoorProbe(
        clean_x=evaluation.flat,
        clean_y=evaluation.labels,
        triggered_x=triggered.reshape(int(flip.sum()), evaluation.flat.shape[1]),
        target_labels=targets[flip],
    )


def prepare(config: RunConfig) -> Prepared:
    streams = SeedStreams(config.seed)
    with stage("data"):
        train_clean, reference, evaluation = load_splits(config, streams)
    with stage("poison"):
        trigger = build_trigger(config, train_clean.shape, streams)
        plan = PoisonPlan(
            poisoning_ratio=config.attack.poisoning_ratio,
            trigger=trigger,
            target_rule=config.attack.target_rule,
            target_label=config.attack.target_label,
            seed=streams.seed("poison"),
        )
        train_set = poison_dataset(train_clean, plan)
        probe = build_probe(evaluation, plan)
    init = init_model(train_set.flat.shape[1], config.model.hidden, train_set.num_classes,
                      streams.generator("init"))
    return Prepared(config, streams, plan, train_set, reference, evaluation, probe, init)


# --- Stage 1: training ---

@dataclass
class TrainedModel:
    name: str
    model: MlpModel
    log: TrainLog

    @property
    def digest(self) -> str:
        return model_digest(self.model)


def train_model(prepared: Prepared, name: str) -> TrainedModel:
    """Train the `name` ("sgd" or "sam") twin from the shared init."""
    section = getattr(prepared.config.train, name)
    cfg = section.model_copy(update={"seed": prepared.streams.seed("shuffle")})
    with stage(f"train_{name}"):
        model, log = train(prepared.train_set, prepared.init, cfg, prepared.probe)
    return TrainedModel(name, model, log)


# --- Stage 2: features and scaling ---

@dataclass
class FittedScaler:
    state: ScalerState
    collected: int
    refined: bool = False

    def describe(self) -> dict:
        return {
            "input_dim": self.state.input_dim,
            "output_dim": self.state.output_dim,
            "collected": self.collected,
            "degenerate": self.state.degenerate,
            "refined": self.refined,
        }


def expected_fraction(config: RunConfig) -> tuple[float, str]:
    """eps-hat for the budgeted detectors and the mode it came from."""
    ratio = config.attack.poisoning_ratio
    if config.detectors.eps_mode == "evaluation" and ratio > 0:
        return min(ratio, 0.49), "evaluation"
    return config.detectors.deployment_fraction, "deployment"


def class_expected_fractions(config: RunConfig, train_set: Dataset) -> np.ndarray | None:
    """Each class's true poison share (capped at 0.49) in evaluation mode, else None."""
    if config.detectors.eps_mode != "evaluation" or not train_set.poisoned.any():
        return None
    k = train_set.num_classes
    sizes = np.bincount(train_set.labels, minlength=k)
    poisoned = np.bincount(train_set.labels[train_set.poisoned], minlength=k)
    shares = np.divide(poisoned, sizes, out=np.zeros(k), where=sizes > 0)
    return np.minimum(shares, 0.49)


def fit_model_scaler(prepared: Prepared, trained: TrainedModel, train_features: np.ndarray,
                     reference_features: np.ndarray, eps: float | np.ndarray) -> FittedScaler:
    sc = prepared.config.scaler
    collected = collect_potential_clean(trained.model, prepared.train_set, sc.cap_per_class, sc.confidence)

    def fit(indices: np.ndarray) -> ScalerState:
        pool = np.vstack([reference_features, train_features[indices]])
        return fit_scaler(train_features, pool, sc.variance_target, sc.max_dim, sc.floor)

    state = fit(collected)
    if not sc.refine:
        return FittedScaler(state, int(collected.size))

    preliminary = detect_ss(scale(state, train_features), prepared.train_set.labels,
                            prepared.train_set.num_classes, eps, seed=prepared.streams.seed("power"))
    kept = collected[~preliminary.flags[collected]]
    logger.info("Scaler refine (%s): dropped %d of %d collected samples",
                trained.name, collected.size - kept.size, collected.size)
    return FittedScaler(fit(kept), int(kept.size), refined=True)


@dataclass
class Variant:
    """One feature space the detectors run on."""
    name: str
    model_name: str
    features: np.ndarray
    reference_features: np.ndarray
    results: list[DetectionResult] = field(default_factory=list)
    metrics: dict[str, MetricReport] = field(default_factory=dict)


# --- Stage 4: analysis ---

def analysis_class(train_set: Dataset, plan: PoisonPlan) -> int:
    """Target class for a fixed rule; otherwise the class holding most poison."""
    if plan.target_rule is TargetRule.FIXED or not train_set.poisoned.any():
        return plan.target_label
    return int(np.argmax(np.bincount(train_set.labels[train_set.poisoned], minlength=train_set.num_classes)))


def feature_diagnostics(variant: Variant, train_set: Dataset, target: int) -> dict:
    clean = ~train_set.poisoned
    out: dict = {}
    try:
        per_class = intra_class_variance(variant.features[clean], train_set.labels[clean], train_set.num_classes)
        out["intra_class_variance"] = {"mean": float(per_class.mean()), "per_class": per_class.tolist()}
    except GroupingError as e:
        logger.warning("Intra-class variance skipped for %s: %s", variant.name, e)
        out["intra_class_variance"] = None

    members = train_set.labels == target
    try:
        out["silhouette"] = silhouette(variant.features[members], train_set.poisoned[members])
    except GroupingError as e:
        logger.info("Silhouette n/a for %s: %s", variant.name, e)
        out["silhouette"] = None

    try:
        out["center_distances"] = center_distances(variant.features, train_set.labels, target,
                                                   train_set.poisoned).summary()
    except ReferenceSetError as e:
        logger.warning("Center distances skipped for %s: %s", variant.name, e)
        out["center_distances"] = None
    return out


def study_summary(profile: TacProfile, norms: np.ndarray) -> dict:
    study = tac_weight_study(profile, norms)
    return {
        "top_neurons": study.neurons.tolist(),
        "mean_tac": study.mean_tac,
        "mean_weight_norm": study.mean_weight_norm,
        "correlation": study.correlation,
    }


# --- Report ---

@dataclass
class PipelineReport:
    """JSON-ready summary plus the in-memory artifacts the CLI writes to disk."""
    payload: dict
    metric_rows: list[dict]
    prepared: Prepared
    models: dict[str, TrainedModel]
    scalers: dict[str, FittedScaler]
    variants: dict[str, Variant]
    tac_profiles: dict[str, tuple[TacProfile, np.ndarray]]


def metric_row(attack: str, detector: str, variant: str, report: MetricReport, seed: int) -> dict:
    return {"attack": attack, "detector": detector, "variant": variant,
            "tpr": report.tpr, "fpr": report.fpr, "f1": report.f1, "auc": report.auc, "seed": seed}


def run_pipeline(config: RunConfig) -> PipelineReport:
    try:
        report = _run(config)
    except PsdLabError:
        PIPELINE_RUNS_TOTAL.labels(status="failed").inc()
        raise
    PIPELINE_RUNS_TOTAL.labels(status="ok").inc()
    return report


def _run(config: RunConfig) -> PipelineReport:
    prepared = prepare(config)
    train_set = prepared.train_set
    variant_names = config.variants()
    logger.info("Pipeline seed=%d attack=%s p=%g variants=%s detectors=%s",
                config.seed, config.attack.name, config.attack.poisoning_ratio,
                ",".join(variant_names), ",".join(config.detectors.names))

    models = {name: train_model(prepared, name) for name in OPTIMIZERS}
    eps, eps_mode = expected_fraction(config)
    per_class = class_expected_fractions(config, train_set)
    detector_eps = eps if per_class is None else per_class

    with stage("features"):
        train_features = {n: extract_features(m.model, train_set.images) for n, m in models.items()}
        reference_features = {n: extract_features(m.model, prepared.reference.images) for n, m in models.items()}

    scalers: dict[str, FittedScaler] = {}
    with stage("scaling"):
        for name in OPTIMIZERS:
            if f"{name}_scaled" in variant_names:
                scalers[name] = fit_model_scaler(prepared, models[name], train_features[name],
                                                 reference_features[name], detector_eps)

    variants: dict[str, Variant] = {}
    for vname in variant_names:
        model_name, kind = vname.split("_")
        feats, ref = train_features[model_name], reference_features[model_name]
        if kind == "scaled":
            state = scalers[model_name].state
            feats, ref = scale(state, feats), scale(state, ref)
        variants[vname] = Variant(vname, model_name, feats, ref)

    rows = []
    entries = []
    params = config.detectors.params()
    detector_seed = prepared.streams.seed("detector")
    with stage("detect"):
        for variant in variants.values():
            ctx = DetectorContext(
                features=variant.features,
                labels=train_set.labels,
                num_classes=train_set.num_classes,
                expected_fraction=detector_eps,
                reference_features=variant.reference_features,
                reference_labels=prepared.reference.labels,
                seed=detector_seed,
            )
            for detector in config.detectors.names:
                result = run_detector(detector, ctx, params)
                metrics = evaluate(result.flags, result.scores, train_set.poisoned)
                variant.results.append(result)
                variant.metrics[detector] = metrics
                DETECTOR_FLAGS_TOTAL.labels(detector=detector, variant=variant.name).inc(result.flagged)
                rows.append(metric_row(config.attack.name, detector, variant.name, metrics, config.seed))
                counts = {k: getattr(metrics, k) for k in ("tp", "fp", "tn", "fn")}
                entries.append({**rows[-1], **counts})

    with stage("analysis"):
        tac_profiles = {}
        for name, trained in models.items():
            profile = tac(trained.model, prepared.reference.images, prepared.plan.trigger)
            tac_profiles[name] = (profile, weight_norms(trained.model))
        target = analysis_class(train_set, prepared.plan)
        analysis = {
            "analysis_class": target,
            "top2_tac": {n: topk_tac(p, TOP_K_TAC) for n, (p, _) in tac_profiles.items()},
            "tac_weight": {n: study_summary(p, w) for n, (p, w) in tac_profiles.items()},
            "features": {v.name: feature_diagnostics(v, train_set, target) for v in variants.values()},
        }

    payload = {
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "attack": {"name": config.attack.name, **plan_summary(prepared.plan),
                   "poisoned": int(train_set.poisoned.sum())},
        "dataset": {
            "source": config.dataset.source,
            "num_classes": train_set.num_classes,
            "shape": list(train_set.shape),
            "train_size": len(train_set),
            "reference_size": len(prepared.reference),
            "evaluation_size": len(prepared.evaluation),
        },
        "expected_fraction": {"value": eps, "mode": eps_mode,
                              "per_class": None if per_class is None else per_class.tolist()},
        "variants": variant_names,
        "detectors": list(config.detectors.names),
        "training": {
            n: {"digest": m.digest, "epochs": len(m.log.epochs),
                "final": asdict(m.log.final) if m.log.final else None}
            for n, m in models.items()
        },
        "scalers": {n: s.describe() for n, s in scalers.items()},
        "metrics": entries,
        "diagnostics": {
            v.name: {r.detector: [d.to_dict() for d in r.diagnostics] for r in v.results}
            for v in variants.values()
        },
        "analysis": analysis,
    }
    return PipelineReport(payload, rows, prepared, models, scalers, variants, tac_profiles)
