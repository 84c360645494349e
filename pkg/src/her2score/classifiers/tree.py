"""Binary CART decision tree with Gini impurity splits.

Candidate thresholds are midpoints between consecutive distinct feature
values; the split minimizing weighted child impurity wins, with ties going
to the lowest feature index and then the lowest threshold. Nodes grow until
pure, too small to split, or unsplittable (all feature columns constant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .base import TrainedModel, samples_to_arrays


@dataclass(frozen=True)
class TreeParams:
    min_samples_split: int = 2
    max_depth: int | None = None

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise InputError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise InputError("max_depth must be >= 1 when set")


def _best_split(x: np.ndarray, y_idx: np.ndarray, n_classes: int):
    """Return (feature, threshold) minimizing weighted Gini, or None.

    Weighted impurity for a prefix split of size m out of n is
    (m * gini_left + (n - m) * gini_right) / n, evaluated for every
    between-distinct-values boundary at once.
    """
    n = y_idx.size
    sizes_left = np.arange(1, n, dtype=np.float64)
    sizes_right = n - sizes_left
    best = None  # (score, feature, threshold)
    for f in range(x.shape[1]):
        values = x[:, f]
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        boundaries = np.nonzero(sorted_vals[:-1] < sorted_vals[1:])[0]
        if boundaries.size == 0:
            continue
        one_hot = np.zeros((n, n_classes), dtype=np.float64)
        one_hot[np.arange(n), y_idx[order]] = 1.0
        prefix = np.cumsum(one_hot, axis=0)
        left = prefix[:-1]
        right = prefix[-1] - left
        # m * gini(counts) == m - sum(counts^2) / m
        scores = (
            sizes_left - (left**2).sum(axis=1) / sizes_left
            + sizes_right - (right**2).sum(axis=1) / sizes_right
        ) / n
        candidate_scores = scores[boundaries]
        j = int(np.argmin(candidate_scores))
        if best is None or candidate_scores[j] < best[0]:
            i = int(boundaries[j])
            threshold = float((sorted_vals[i] + sorted_vals[i + 1]) / 2.0)
            best = (float(candidate_scores[j]), f, threshold)
    if best is None:
        return None
    return best[1], best[2]


def tree_train(samples, params: TreeParams = TreeParams()) -> TrainedModel:
    x, y = samples_to_arrays(samples)
    class_set = sorted(set(int(v) for v in y))
    index_of = {label: i for i, label in enumerate(class_set)}
    y_idx = np.array([index_of[int(v)] for v in y], dtype=np.int64)

    features: list[int] = []
    thresholds: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    leaf_labels: list[int] = []

    def majority(idx: np.ndarray) -> int:
        counts = np.bincount(y_idx[idx], minlength=len(class_set))
        return class_set[int(np.argmax(counts))]

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(features)
        features.append(-1)
        thresholds.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        leaf_labels.append(-1)

        labels = y_idx[idx]
        pure = np.all(labels == labels[0])
        depth_capped = params.max_depth is not None and depth >= params.max_depth
        if pure or idx.size < params.min_samples_split or depth_capped:
            leaf_labels[node] = majority(idx)
            return node
        split = _best_split(x[idx], labels, len(class_set))
        if split is None:
            leaf_labels[node] = majority(idx)
            return node
        f, threshold = split
        mask = x[idx, f] <= threshold
        features[node] = f
        thresholds[node] = threshold
        lefts[node] = build(idx[mask], depth + 1)
        rights[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(len(y)), 0)
    return TrainedModel(
        kind="tree",
        class_set=class_set,
        feature_dim=x.shape[1],
        params={"min_samples_split": params.min_samples_split, "max_depth": params.max_depth},
        state={
            "feature": np.array(features, dtype=np.int64),
            "threshold": np.array(thresholds, dtype=np.float64),
            "left": np.array(lefts, dtype=np.int64),
            "right": np.array(rights, dtype=np.int64),
            "leaf_label": np.array(leaf_labels, dtype=np.int64),
        },
    )


def tree_predict(model: TrainedModel, x) -> int:
    query = model.check_dim(x)
    state = model.state
    node = 0
    while state["feature"][node] >= 0:
        if query[state["feature"][node]] <= state["threshold"][node]:
            node = int(state["left"][node])
        else:
            node = int(state["right"][node])
    return int(state["leaf_label"][node])
