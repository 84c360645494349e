"""Leave-one-patient-out evaluation, metrics, and the synthetic cohort.

Folds are keyed by patient id: all slides (and curated patches) of one
patient form the test fold while both pipeline levels are trained on the
remaining patients. Folds whose training data lack a required class are
skipped with a warning instead of failing the whole run. The synthetic
cohort generator emits a deliberately simple two-color stain model (white
background plus brown membrane pixels whose fraction and intensity grow
with the score class) so descriptor separability, not generator realism,
is what gets tested.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .classifiers import predict_batch
from .errors import DataError, DegenerateSlideError, MissingClassError, UndefinedMetricError
from .ioutil import canonical_json
from .pipeline import (
    CaseRecord,
    ClassMode,
    CuratedPatch,
    FeatureCache,
    Her2Score,
    PipelineConfig,
    classify_slide_patches,
    occurrence_vector,
    patch_class_of,
    patch_classes,
    predict_score,
    score_classes,
    score_of,
    train_image_level,
    train_patient_level,
)
from .imaging import RasterImage, RasterPatch

logger = logging.getLogger(__name__)

_DESCRIPTOR_DISPLAY = {
    "hsv": "HSV",
    "hsv_ms": "HSV_MS",
    "hsv_rgb": "HSV_RGB",
    "lbp": "LBP",
    "pftas": "PFTAS",
}
_CLASSIFIER_DISPLAY = {"svm": "SVM", "knn": "KNN", "mlp": "MLP", "tree": "Tree"}
_CLASSIFIER_COLUMNS = ["svm", "knn", "mlp", "tree"]


@dataclass(eq=False)
class ConfusionMatrix:
    """Square truth-by-prediction counts over an ordered class set."""

    class_set: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.class_set = [str(c) for c in self.class_set]
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_set)
        if self.counts.shape != (k, k):
            raise DataError(f"confusion matrix must be {k}x{k}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be nonnegative")

    @classmethod
    def from_pairs(cls, truths, predictions, class_set) -> "ConfusionMatrix":
        class_set = [str(c) for c in class_set]
        index = {c: i for i, c in enumerate(class_set)}
        counts = np.zeros((len(class_set), len(class_set)), dtype=np.int64)
        for truth, pred in zip(truths, predictions):
            counts[index[str(truth)], index[str(pred)]] += 1
        return cls(class_set, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"classes": self.class_set, "counts": self.counts.tolist()}


def accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise UndefinedMetricError("empty confusion matrix has no accuracy")
    return float(np.trace(matrix.counts)) / matrix.total


def sensitivity_specificity(matrix: ConfusionMatrix, positive_class, negative_class):
    """(sensitivity, specificity) on the positive-vs-negative restriction.

    Predictions into other classes (the equivocal column) are excluded:
    sensitivity = TP / (TP + FN) counts only positive-truth slides predicted
    positive or negative, and symmetrically for specificity.
    """
    pos = str(positive_class)
    neg = str(negative_class)
    for name in (pos, neg):
        if name not in matrix.class_set:
            raise UndefinedMetricError(f"class {name!r} not in confusion matrix")
    p = matrix.class_set.index(pos)
    n = matrix.class_set.index(neg)
    if matrix.counts[p].sum() == 0 or matrix.counts[n].sum() == 0:
        raise UndefinedMetricError("positive and negative classes must both appear in truth")
    tp = int(matrix.counts[p, p])
    fn = int(matrix.counts[p, n])
    tn = int(matrix.counts[n, n])
    fp = int(matrix.counts[n, p])
    if tp + fn == 0 or tn + fp == 0:
        raise UndefinedMetricError("restricted denominators are empty")
    return tp / (tp + fn), tn / (tn + fp)


@dataclass(eq=False)
class FoldPrediction:
    patient_id: str
    slide_id: str
    truth: str
    predicted: str


@dataclass(eq=False)
class LopoResult:
    """Aggregate of one leave-one-patient-out run."""

    config: dict
    predictions: list[FoldPrediction]
    confusion: ConfusionMatrix
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    image_confusion: ConfusionMatrix | None
    image_accuracy: float | None
    folds: list[dict]
    skipped: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "confusion": self.confusion.to_dict(),
            "image_accuracy": self.image_accuracy,
            "image_confusion": self.image_confusion.to_dict() if self.image_confusion else None,
            "predictions": [
                {
                    "patient_id": p.patient_id,
                    "slide_id": p.slide_id,
                    "truth": p.truth,
                    "predicted": p.predicted,
                }
                for p in self.predictions
            ],
            "folds": self.folds,
            "skipped": self.skipped,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"


def _fold_coverage_gap(train_cases, config: PipelineConfig) -> str | None:
    """Name the first missing class in a fold's training data, if any."""
    active_patches = patch_classes(config.class_mode)
    curated_present = set()
    for case in train_cases:
        for cp in case.curated:
            curated_present.add(patch_class_of(cp.label, config.class_mode))
    missing = [c.value for c in active_patches if c not in curated_present]
    if missing:
        return f"curated patches missing classes {missing}"
    truth_present = {
        score_of(c.ground_truth, config.class_mode)
        for c in train_cases
        if c.ground_truth is not None
    }
    missing_scores = [s.value for s in score_classes(config.class_mode) if s not in truth_present]
    if missing_scores:
        return f"ground truths missing score classes {missing_scores}"
    return None


def run_lopo(cases, config: PipelineConfig, threads: int | None = None) -> LopoResult:
    """Leave-one-patient-out over both pipeline levels."""
    cases = list(cases)
    patients = sorted({c.patient_id for c in cases})
    if len(patients) < 2:
        raise DataError("leave-one-patient-out needs at least two patients")
    for case in cases:
        if case.ground_truth is None:
            raise MissingClassError(f"slide {case.slide_id} has no ground truth")

    cache = FeatureCache(config, threads=threads)
    mode = ClassMode(config.class_mode)
    score_order = [s.value for s in score_classes(mode)]
    patch_order = [c.value for c in patch_classes(mode)]

    predictions: list[FoldPrediction] = []
    folds: list[dict] = []
    skipped: list[dict] = []
    patch_truths: list[str] = []
    patch_predictions: list[str] = []

    for held_patient in patients:
        train_cases = [c for c in cases if c.patient_id != held_patient]
        held_cases = [c for c in cases if c.patient_id == held_patient]
        training_patients = sorted({c.patient_id for c in train_cases})
        assert held_patient not in training_patients, "held-out patient leaked into training"

        gap = _fold_coverage_gap(train_cases, config)
        if gap is not None:
            logger.warning("skipping fold %s: %s", held_patient, gap)
            skipped.append({"patient_id": held_patient, "reason": gap})
            continue

        image_model = train_image_level(train_cases, config, cache)

        occurrences = []
        truths = []
        for case in train_cases:
            try:
                counts = classify_slide_patches(image_model, case, cache)
                occurrences.append(
                    occurrence_vector(counts, config.include_noise_fraction, case.slide_id)
                )
            except DegenerateSlideError as exc:
                logger.warning("fold %s: training slide dropped: %s", held_patient, exc)
                continue
            truths.append(score_of(case.ground_truth, mode))
        try:
            patient_model = train_patient_level(occurrences, truths, config)
        except MissingClassError as exc:
            reason = f"patient-level training failed: {exc}"
            logger.warning("skipping fold %s: %s", held_patient, reason)
            skipped.append({"patient_id": held_patient, "reason": reason})
            continue

        scored = 0
        for case in held_cases:
            truth = score_of(case.ground_truth, mode).value
            try:
                counts = classify_slide_patches(image_model, case, cache)
                occurrence = occurrence_vector(counts, config.include_noise_fraction, case.slide_id)
                predicted = predict_score(patient_model, occurrence).value
            except DegenerateSlideError as exc:
                logger.warning("fold %s: unscorable slide %s: %s", held_patient, case.slide_id, exc)
                skipped.append({"patient_id": held_patient, "reason": f"unscorable slide {case.slide_id}"})
                continue
            predictions.append(FoldPrediction(held_patient, case.slide_id, truth, predicted))
            scored += 1

            if case.curated:
                vectors = cache.features([cp.patch for cp in case.curated])
                picks = predict_batch(image_model, vectors)
                labels = image_model.metadata["class_labels"]
                for cp, pick in zip(case.curated, picks):
                    patch_truths.append(patch_class_of(cp.label, mode).value)
                    patch_predictions.append(labels[int(pick)])

        folds.append(
            {
                "held_out": held_patient,
                "training_patients": training_patients,
                "slides_scored": scored,
            }
        )

    confusion = ConfusionMatrix.from_pairs(
        [p.truth for p in predictions], [p.predicted for p in predictions], score_order
    )
    overall = accuracy(confusion) if predictions else 0.0
    sens = spec = None
    if mode == ClassMode.FOUR:
        try:
            sens, spec = sensitivity_specificity(
                confusion, Her2Score.POSITIVE.value, Her2Score.NEGATIVE.value
            )
        except UndefinedMetricError:
            pass
    image_confusion = None
    image_accuracy = None
    if patch_truths:
        image_confusion = ConfusionMatrix.from_pairs(patch_truths, patch_predictions, patch_order)
        image_accuracy = accuracy(image_confusion)

    return LopoResult(
        config=config.echo(),
        predictions=predictions,
        confusion=confusion,
        accuracy=overall,
        sensitivity=sens,
        specificity=spec,
        image_confusion=image_confusion,
        image_accuracy=image_accuracy,
        folds=folds,
        skipped=skipped,
    )


@dataclass(frozen=True)
class StainClassModel:
    """Mean stained-pixel fraction and stain intensity for one score class."""

    brown_fraction: float
    brown_intensity: float

    def __post_init__(self):
        if not 0.0 <= self.brown_fraction <= 1.0:
            raise DataError("brown_fraction must be in [0, 1]")
        if not 0.0 <= self.brown_intensity <= 1.0:
            raise DataError("brown_intensity must be in [0, 1]")


def default_stain_models(mode: ClassMode) -> dict[Her2Score, StainClassModel]:
    if ClassMode(mode) == ClassMode.FOUR:
        return {
            Her2Score.NEGATIVE: StainClassModel(0.03, 0.20),
            Her2Score.EQUIVOCAL: StainClassModel(0.18, 0.55),
            Her2Score.POSITIVE: StainClassModel(0.45, 0.90),
        }
    return {
        Her2Score.SCORE_0: StainClassModel(0.01, 0.12),
        Her2Score.SCORE_1: StainClassModel(0.07, 0.30),
        Her2Score.SCORE_2: StainClassModel(0.18, 0.55),
        Her2Score.SCORE_3: StainClassModel(0.45, 0.90),
    }


_PATCH_LABEL_OF_SCORE = {
    Her2Score.NEGATIVE: "0/1+",
    Her2Score.EQUIVOCAL: "2+",
    Her2Score.POSITIVE: "3+",
    Her2Score.SCORE_0: "0",
    Her2Score.SCORE_1: "1+",
    Her2Score.SCORE_2: "2+",
    Her2Score.SCORE_3: "3+",
}

_GRADE_OF_SCORE = {
    Her2Score.NEGATIVE: "0/1+",
    Her2Score.EQUIVOCAL: "2+",
    Her2Score.POSITIVE: "3+",
    Her2Score.SCORE_0: "0",
    Her2Score.SCORE_1: "1+",
    Her2Score.SCORE_2: "2+",
    Her2Score.SCORE_3: "3+",
}


@dataclass
class SyntheticCohortSpec:
    cases_per_class: int = 10
    patches_per_slide: int = 40
    curated_per_slide: int = 6
    noise_rate: float = 0.1
    patch_size: int = 250
    class_mode: ClassMode = ClassMode.FOUR
    stain_models: dict[Her2Score, StainClassModel] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.cases_per_class < 1 or self.patches_per_slide < 1 or self.curated_per_slide < 1:
            raise DataError("cohort counts must be positive")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise DataError("noise_rate must be in [0, 1]")
        if self.patch_size < 3:
            raise DataError("patch_size must be at least 3")


def _stained_patch(rng: np.random.Generator, size: int, fraction: float, intensity: float) -> np.ndarray:
    n = size * size
    px = rng.integers(235, 251, size=(n, 3)).astype(np.float64)
    k = int(round(fraction * n))
    if k > 0:
        idx = rng.permutation(n)[:k]
        base = np.array(
            [205.0 - 150.0 * intensity, 160.0 - 130.0 * intensity, 120.0 - 105.0 * intensity]
        )
        px[idx] = base + rng.normal(0.0, 6.0, size=(k, 3))
    return np.clip(px, 0, 255).astype(np.uint8).reshape(size, size, 3)


def _noise_patch(rng: np.random.Generator, size: int) -> np.ndarray:
    # out-of-focus bluish smear: distinct hue from both glass and stain
    n = size * size
    gray = rng.integers(185, 215, size=(n, 1)).astype(np.float64)
    px = np.concatenate([gray - 10.0, gray, gray + 18.0], axis=1)
    px += rng.normal(0.0, 3.0, size=(n, 3))
    return np.clip(px, 0, 255).astype(np.uint8).reshape(size, size, 3)


def _curated_indices(labels: list[str], want: int) -> list[int]:
    """Stratified pick: cycle through the distinct labels in first-seen order."""
    by_label: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    picked: list[int] = []
    round_idx = 0
    while len(picked) < min(want, len(labels)):
        progressed = False
        for members in by_label.values():
            if round_idx < len(members) and len(picked) < want:
                picked.append(members[round_idx])
                progressed = True
        if not progressed:
            break
        round_idx += 1
    return sorted(picked)


def generate_synthetic_cohort(spec: SyntheticCohortSpec) -> list[CaseRecord]:
    """Deterministic synthetic cases; one slide per case.

    A positive noise rate guarantees at least one noise patch per slide
    (the last patch is forced when the draws produced none), so every
    leave-one-patient-out fold can cover the noise class.
    """
    rng = np.random.default_rng(spec.seed)
    models = spec.stain_models or default_stain_models(spec.class_mode)
    cases: list[CaseRecord] = []
    case_idx = 0
    for score in score_classes(spec.class_mode):
        stain = models[score]
        for _ in range(spec.cases_per_class):
            patient_id = f"patient{case_idx:03d}"
            slide_id = f"slide{case_idx:03d}"
            patches: list[RasterPatch] = []
            labels: list[str] = []
            for p in range(spec.patches_per_slide):
                last = p == spec.patches_per_slide - 1
                force_noise = (
                    last and spec.noise_rate > 0.0 and "noise" not in labels
                )
                if force_noise or rng.random() < spec.noise_rate:
                    px = _noise_patch(rng, spec.patch_size)
                    label = "noise"
                else:
                    fraction = float(
                        np.clip(
                            rng.normal(stain.brown_fraction, 0.15 * stain.brown_fraction + 0.002),
                            0.0,
                            0.9,
                        )
                    )
                    intensity = float(np.clip(rng.normal(stain.brown_intensity, 0.04), 0.05, 1.0))
                    px = _stained_patch(rng, spec.patch_size, fraction, intensity)
                    label = _PATCH_LABEL_OF_SCORE[score]
                patches.append(
                    RasterPatch(
                        origin_x=(p % 8) * spec.patch_size,
                        origin_y=(p // 8) * spec.patch_size,
                        data=RasterImage(px),
                        slide_id=slide_id,
                    )
                )
                labels.append(label)
            curated = [
                CuratedPatch(patch=patches[i], label=labels[i])
                for i in _curated_indices(labels, spec.curated_per_slide)
            ]
            cases.append(
                CaseRecord(
                    patient_id=patient_id,
                    slide_id=slide_id,
                    all_patches=patches,
                    ground_truth=_GRADE_OF_SCORE[score],
                    curated=curated,
                )
            )
            case_idx += 1
    return cases


def _accuracy_cell(values: list[float]) -> str:
    if not values:
        return ""
    return f"{100.0 * sum(values) / len(values):.2f}"


def _grid_csv(row_label: str, rows: list[str], columns: list[str], cells: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([row_label] + [_CLASSIFIER_DISPLAY[c] for c in columns])
    for row in rows:
        writer.writerow([row] + [_accuracy_cell(cells.get((row, col), [])) for col in columns])
    return buf.getvalue()


def _grid_text(title: str, csv_text: str) -> str:
    rows = [line.split(",") for line in csv_text.strip().split("\n")] if csv_text.strip() else []
    if not rows:
        return title + "\n(no results)\n"
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [title]
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(lines) + "\n"


def report_tables(results) -> dict[str, str]:
    """Accuracy grids (image level and patient level) as CSV and plain text."""
    results = list(results)
    image_cells: dict[tuple[str, str], list[float]] = {}
    patient_cells: dict[tuple[str, str], list[float]] = {}
    image_rows: list[str] = []
    patient_rows: list[str] = []
    for result in results:
        cfg = result.config
        descriptor = _DESCRIPTOR_DISPLAY.get(cfg["descriptor"], cfg["descriptor"])
        image_clf = cfg["image_classifier"]
        patient_clf = cfg["patient_classifier"]
        if result.image_accuracy is not None:
            image_cells.setdefault((descriptor, image_clf), []).append(result.image_accuracy)
            if descriptor not in image_rows:
                image_rows.append(descriptor)
        row = f"{descriptor}+{_CLASSIFIER_DISPLAY[image_clf]}"
        patient_cells.setdefault((row, patient_clf), []).append(result.accuracy)
        if row not in patient_rows:
            patient_rows.append(row)

    image_csv = _grid_csv("descriptor", image_rows, _CLASSIFIER_COLUMNS, image_cells)
    patient_csv = _grid_csv("pipeline", patient_rows, _CLASSIFIER_COLUMNS, patient_cells)
    text = (
        _grid_text("Accuracy, image level (%)", image_csv)
        + "\n"
        + _grid_text("Accuracy, patient level (%)", patient_csv)
    )
    return {"image_level_csv": image_csv, "patient_level_csv": patient_csv, "text": text}
