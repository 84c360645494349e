"""Shared classifier plumbing: labeled samples and the trained-model container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatchError, EmptyTrainingSetError


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One training example: a dense feature vector, a class index, a patient id."""

    features: np.ndarray
    label: int
    group_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64).ravel())
        object.__setattr__(self, "label", int(self.label))


@dataclass
class TrainedModel:
    """Serializable classifier state.

    kind identifies the algorithm ("knn", "tree", "mlp", "svm"); class_set
    is the ordered label list learned at training time; state holds the
    learned arrays and params echoes the training parameters. metadata is
    free-form (the pipeline stores descriptor identity and class-label maps
    there).
    """

    kind: str
    class_set: list[int]
    feature_dim: int
    params: dict
    state: dict
    metadata: dict = field(default_factory=dict)

    def check_dim(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64).ravel()
        if arr.size != self.feature_dim:
            raise DimensionMismatchError(
                f"{self.kind} model expects {self.feature_dim} features, got {arr.size}"
            )
        return arr


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack LabeledSamples into (X, y); order is preserved."""
    samples = list(samples)
    if not samples:
        raise EmptyTrainingSetError("no training samples")
    dims = {s.features.size for s in samples}
    if len(dims) != 1:
        raise DimensionMismatchError(f"inconsistent feature dims in training set: {sorted(dims)}")
    x = np.stack([s.features for s in samples]).astype(np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y
