"""Two-level scoring pipeline: patch classification, then per-slide
occurrence vectors feeding a slide-level classifier.

A deliberate non-feature: there is no fixed-threshold scoring rule mapping
patch counts directly to a score. Occurrence vectors always feed a trained
classifier.

Class modes:
  five: patches {0, 1+, 2+, 3+, noise}, slide scores {0, 1+, 2+, 3+}
  four: patches {0/1+, 2+, 3+, noise}, slide scores {negative, equivocal, positive}
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .classifiers import (
    KnnParams,
    LabeledSample,
    MlpParams,
    SvmParams,
    TrainedModel,
    TreeParams,
    grid_search_svm,
    knn_train,
    mlp_train,
    predict_batch,
    svm_train,
    tree_train,
)
from .errors import (
    ConfigError,
    DegenerateSlideError,
    DimensionMismatchError,
    ManifestError,
    MissingClassError,
)
from .features import DescriptorId, HistogramConfig, LbpParams, extract_feature
from .imaging import RasterPatch


class ClassMode(str, Enum):
    FOUR = "four"
    FIVE = "five"


class PatchClass(str, Enum):
    SCORE_0 = "0"
    SCORE_1 = "1+"
    SCORE_2 = "2+"
    SCORE_3 = "3+"
    NEGATIVE = "0/1+"
    NOISE = "noise"


class Her2Score(str, Enum):
    SCORE_0 = "0"
    SCORE_1 = "1+"
    SCORE_2 = "2+"
    SCORE_3 = "3+"
    NEGATIVE = "negative"
    EQUIVOCAL = "equivocal"
    POSITIVE = "positive"


_PATCH_CLASSES = {
    ClassMode.FIVE: [
        PatchClass.SCORE_0,
        PatchClass.SCORE_1,
        PatchClass.SCORE_2,
        PatchClass.SCORE_3,
        PatchClass.NOISE,
    ],
    ClassMode.FOUR: [
        PatchClass.NEGATIVE,
        PatchClass.SCORE_2,
        PatchClass.SCORE_3,
        PatchClass.NOISE,
    ],
}

_SCORE_CLASSES = {
    ClassMode.FIVE: [Her2Score.SCORE_0, Her2Score.SCORE_1, Her2Score.SCORE_2, Her2Score.SCORE_3],
    ClassMode.FOUR: [Her2Score.NEGATIVE, Her2Score.EQUIVOCAL, Her2Score.POSITIVE],
}


def patch_classes(mode: ClassMode) -> list[PatchClass]:
    return list(_PATCH_CLASSES[ClassMode(mode)])


def score_classes(mode: ClassMode) -> list[Her2Score]:
    return list(_SCORE_CLASSES[ClassMode(mode)])


def patch_class_of(raw_label: str, mode: ClassMode) -> PatchClass:
    """Map a manifest patch label ("0", "1+", "2+", "3+", "0/1+", "noise")."""
    label = str(raw_label).strip().lower()
    mode = ClassMode(mode)
    if label == "noise":
        return PatchClass.NOISE
    if label in ("0", "1+"):
        if mode == ClassMode.FOUR:
            return PatchClass.NEGATIVE
        return PatchClass.SCORE_0 if label == "0" else PatchClass.SCORE_1
    if label == "0/1+":
        if mode == ClassMode.FIVE:
            raise ManifestError("label '0/1+' is only valid in four-class mode")
        return PatchClass.NEGATIVE
    if label == "2+":
        return PatchClass.SCORE_2
    if label == "3+":
        return PatchClass.SCORE_3
    raise ManifestError(f"unknown patch label {raw_label!r}")


def score_of(ground_truth: str, mode: ClassMode) -> Her2Score:
    """Map a clinical grade ("0", "1+", "2+", "3+") to the active score set."""
    grade = str(ground_truth).strip().lower()
    mode = ClassMode(mode)
    if mode == ClassMode.FIVE:
        table = {
            "0": Her2Score.SCORE_0,
            "1+": Her2Score.SCORE_1,
            "2+": Her2Score.SCORE_2,
            "3+": Her2Score.SCORE_3,
        }
    else:
        table = {
            "0": Her2Score.NEGATIVE,
            "1+": Her2Score.NEGATIVE,
            "0/1+": Her2Score.NEGATIVE,
            "2+": Her2Score.EQUIVOCAL,
            "3+": Her2Score.POSITIVE,
        }
    if grade not in table:
        raise ManifestError(f"unknown ground truth grade {ground_truth!r}")
    return table[grade]


@dataclass(frozen=True, eq=False)
class CuratedPatch:
    """A pathologist-curated training patch with its raw label."""

    patch: RasterPatch
    label: str


@dataclass(eq=False)
class CaseRecord:
    """One patient's slide: its tissue patches, grade, and curated patches."""

    patient_id: str
    slide_id: str
    all_patches: list[RasterPatch] = field(default_factory=list)
    ground_truth: str | None = None
    curated: list[CuratedPatch] = field(default_factory=list)

    def __post_init__(self):
        if not self.patient_id:
            raise ManifestError("patient_id must be nonempty")
        if not self.slide_id:
            raise ManifestError("slide_id must be nonempty")


@dataclass(frozen=True)
class ClassifierSpec:
    """Classifier kind plus its parameters; None picks the kind's defaults.

    For SVM the parameters are found by grid search at training time, so
    params holds the optional grid (a list of SvmParams) rather than one
    parameter point.
    """

    kind: str
    params: object | None = None

    def __post_init__(self):
        if self.kind not in ("knn", "svm", "mlp", "tree"):
            raise ConfigError(f"unknown classifier kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    descriptor: DescriptorId = DescriptorId.HSV_HIST
    histogram: HistogramConfig = HistogramConfig()
    lbp: LbpParams = LbpParams()
    image_level: ClassifierSpec = ClassifierSpec("knn")
    patient_level: ClassifierSpec = ClassifierSpec("svm")
    class_mode: ClassMode = ClassMode.FOUR
    include_noise_fraction: bool = True
    seed: int = 0
    grid_folds: int = 3

    def echo(self) -> dict:
        """Flat serializable view used in reports and reproduce lines."""
        return {
            "descriptor": DescriptorId(self.descriptor).value,
            "bins": self.histogram.bins_per_channel,
            "normalize_histograms": self.histogram.normalize,
            "lbp_radius": self.lbp.radius,
            "image_classifier": self.image_level.kind,
            "patient_classifier": self.patient_level.kind,
            "class_mode": ClassMode(self.class_mode).value,
            "include_noise_fraction": self.include_noise_fraction,
            "seed": self.seed,
            "grid_folds": self.grid_folds,
        }


@dataclass(frozen=True, eq=False)
class OccurrenceVector:
    """Per-class patch fractions for one slide; sums to 1."""

    fractions: dict[PatchClass, float]
    total_patches: int
    slide_id: str = ""

    def __post_init__(self):
        if self.total_patches <= 0:
            raise DegenerateSlideError("occurrence vector needs at least one patch")
        total = sum(self.fractions.values())
        if abs(total - 1.0) > 1e-9:
            raise DegenerateSlideError(f"occurrence fractions sum to {total!r}, expected 1")
        if any(v < 0 for v in self.fractions.values()):
            raise DegenerateSlideError("occurrence fractions must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array(list(self.fractions.values()), dtype=np.float64)


class FeatureCache:
    """Memoizes descriptor extraction per patch object.

    Extraction is a pure function, so caching cannot change results; it
    only avoids recomputing features across leave-one-patient-out folds.
    """

    def __init__(self, config: PipelineConfig, threads: int | None = None):
        self.config = config
        self.threads = threads
        self._store: dict[int, np.ndarray] = {}

    def _compute(self, patch) -> np.ndarray:
        return extract_feature(
            patch, self.config.descriptor, self.config.histogram, self.config.lbp
        ).values

    def features(self, patches) -> np.ndarray:
        patches = list(patches)
        missing = [p for p in patches if id(p) not in self._store]
        if missing:
            if self.threads is not None and self.threads > 1 and len(missing) > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    vectors = list(pool.map(self._compute, missing))
            else:
                vectors = [self._compute(p) for p in missing]
            for patch, vec in zip(missing, vectors):
                self._store[id(patch)] = vec
        return np.stack([self._store[id(p)] for p in patches])


def _train_classifier(samples, spec: ClassifierSpec, seed: int, grid_folds: int,
                      grid_trace: list | None = None) -> TrainedModel:
    if spec.kind == "knn":
        return knn_train(samples, spec.params or KnnParams())
    if spec.kind == "tree":
        return tree_train(samples, spec.params or TreeParams())
    if spec.kind == "mlp":
        params = spec.params or MlpParams(seed=seed)
        return mlp_train(samples, params)
    best = grid_search_svm(samples, grid=spec.params, folds=grid_folds, trace=grid_trace)
    return svm_train(samples, best)


def _image_metadata(config: PipelineConfig) -> dict:
    return {
        "level": "image",
        "descriptor": DescriptorId(config.descriptor).value,
        "bins": config.histogram.bins_per_channel,
        "normalize": config.histogram.normalize,
        "lbp_radius": config.lbp.radius,
        "class_mode": ClassMode(config.class_mode).value,
        "class_labels": [c.value for c in patch_classes(config.class_mode)],
        "seed": config.seed,
    }


def _extraction_config(metadata: dict) -> PipelineConfig:
    return PipelineConfig(
        descriptor=DescriptorId(metadata["descriptor"]),
        histogram=HistogramConfig(metadata["bins"], metadata["normalize"]),
        lbp=LbpParams(radius=metadata["lbp_radius"]),
        class_mode=ClassMode(metadata["class_mode"]),
    )


def curated_samples(cases, config: PipelineConfig, cache: FeatureCache | None = None):
    """LabeledSamples for every curated patch, in case order then patch order."""
    cache = cache or FeatureCache(config)
    active = patch_classes(config.class_mode)
    index_of = {cls: i for i, cls in enumerate(active)}
    samples = []
    for case in cases:
        if not case.curated:
            continue
        vectors = cache.features([cp.patch for cp in case.curated])
        for curated, vec in zip(case.curated, vectors):
            cls = patch_class_of(curated.label, config.class_mode)
            samples.append(LabeledSample(vec, index_of[cls], group_id=case.patient_id))
    return samples


def train_image_level(cases, config: PipelineConfig, cache: FeatureCache | None = None,
                      grid_trace: list | None = None) -> TrainedModel:
    """Train the patch classifier on every curated patch of the given cases."""
    samples = curated_samples(cases, config, cache)
    if not samples:
        raise MissingClassError("no curated patches in any training case")
    active = patch_classes(config.class_mode)
    present = {s.label for s in samples}
    missing = [active[i].value for i in range(len(active)) if i not in present]
    if missing:
        raise MissingClassError(f"curated patches missing classes: {missing}")
    model = _train_classifier(samples, config.image_level, config.seed, config.grid_folds, grid_trace)
    model.metadata = _image_metadata(config)
    return model


def classify_slide_patches(model: TrainedModel, case: CaseRecord,
                           cache: FeatureCache | None = None) -> dict[PatchClass, int]:
    """Classify every tissue patch of one slide; returns per-class counts."""
    if model.metadata.get("level") != "image":
        raise DimensionMismatchError("expected an image-level model")
    if not case.all_patches:
        raise DegenerateSlideError(f"slide {case.slide_id} has no patches")
    cache = cache or FeatureCache(_extraction_config(model.metadata))
    vectors = cache.features(case.all_patches)
    if vectors.shape[1] != model.feature_dim:
        raise DimensionMismatchError(
            f"descriptor dim {vectors.shape[1]} does not match model dim {model.feature_dim}"
        )
    labels = model.metadata["class_labels"]
    counts = {PatchClass(value): 0 for value in labels}
    for idx in predict_batch(model, vectors):
        counts[PatchClass(labels[int(idx)])] += 1
    return counts


def occurrence_vector(counts: dict[PatchClass, int], include_noise: bool = True,
                      slide_id: str = "") -> OccurrenceVector:
    """Normalize per-class counts into fractions (class order preserved)."""
    included = {
        cls: int(n) for cls, n in counts.items()
        if include_noise or PatchClass(cls) != PatchClass.NOISE
    }
    total = sum(included.values())
    if total <= 0:
        raise DegenerateSlideError(
            f"slide {slide_id or '<unnamed>'} has no scorable patches"
            + ("" if include_noise else " once noise is excluded")
        )
    fractions = {PatchClass(cls): n / total for cls, n in included.items()}
    return OccurrenceVector(fractions=fractions, total_patches=total, slide_id=slide_id)


def _aligned_fractions(occurrence: OccurrenceVector, order: list[PatchClass]) -> np.ndarray:
    if set(order) != set(occurrence.fractions):
        raise DimensionMismatchError(
            f"occurrence vector for slide {occurrence.slide_id!r} covers "
            f"{sorted(c.value for c in occurrence.fractions)}, expected "
            f"{sorted(c.value for c in order)}"
        )
    return np.array([occurrence.fractions[cls] for cls in order], dtype=np.float64)


def train_patient_level(occurrences, truths, config: PipelineConfig,
                        grid_trace: list | None = None) -> TrainedModel:
    """Train the slide-score classifier on occurrence vectors + ground truths."""
    occurrences = list(occurrences)
    truths = [Her2Score(t) for t in truths]
    if len(occurrences) != len(truths):
        raise MissingClassError("occurrence vectors and ground truths differ in length")
    if not occurrences:
        raise MissingClassError("no slides to train on")
    active = score_classes(config.class_mode)
    index_of = {score: i for i, score in enumerate(active)}
    missing = [s.value for s in active if s not in set(truths)]
    if missing:
        raise MissingClassError(f"training slides missing score classes: {missing}")
    order = [
        c for c in patch_classes(config.class_mode)
        if config.include_noise_fraction or c != PatchClass.NOISE
    ]
    samples = [
        LabeledSample(_aligned_fractions(occ, order), index_of[truth], group_id=occ.slide_id)
        for occ, truth in zip(occurrences, truths)
    ]
    model = _train_classifier(samples, config.patient_level, config.seed, config.grid_folds, grid_trace)
    model.metadata = {
        "level": "patient",
        "class_mode": ClassMode(config.class_mode).value,
        "include_noise_fraction": config.include_noise_fraction,
        "occurrence_classes": [
            c.value for c in patch_classes(config.class_mode)
            if config.include_noise_fraction or c != PatchClass.NOISE
        ],
        "score_labels": [s.value for s in active],
        "seed": config.seed,
    }
    return model


def score_wsi(image_model: TrainedModel, patient_model: TrainedModel, case: CaseRecord,
              cache: FeatureCache | None = None) -> Her2Score:
    """Full composition: classify patches, build occurrences, predict score."""
    if patient_model.metadata.get("level") != "patient":
        raise DimensionMismatchError("expected a patient-level model")
    if image_model.metadata.get("class_mode") != patient_model.metadata.get("class_mode"):
        raise DimensionMismatchError("image and patient models use different class modes")
    counts = classify_slide_patches(image_model, case, cache)
    occurrence = occurrence_vector(
        counts,
        include_noise=patient_model.metadata["include_noise_fraction"],
        slide_id=case.slide_id,
    )
    return predict_score(patient_model, occurrence)


def predict_score(patient_model: TrainedModel, occurrence: OccurrenceVector) -> Her2Score:
    """Predict a slide score from one occurrence vector."""
    from .classifiers import predict

    order = [PatchClass(v) for v in patient_model.metadata["occurrence_classes"]]
    x = _aligned_fractions(occurrence, order)
    label_idx = predict(patient_model, x)
    return Her2Score(patient_model.metadata["score_labels"][int(label_idx)])
