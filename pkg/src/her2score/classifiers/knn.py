"""K-nearest-neighbor classifier with Euclidean distance.

Deterministic tie handling: distance ties go to the earliest training
index; vote ties go to the tied label whose nearest member is closest
(then earliest index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .base import TrainedModel, samples_to_arrays


@dataclass(frozen=True)
class KnnParams:
    k: int = 1

    def __post_init__(self):
        if not 1 <= self.k <= 9:
            raise InputError("k must be in 1..9")


def knn_train(samples, params: KnnParams = KnnParams()) -> TrainedModel:
    x, y = samples_to_arrays(samples)
    if params.k > len(y):
        raise InputError(f"k={params.k} exceeds training-set size {len(y)}")
    return TrainedModel(
        kind="knn",
        class_set=sorted(set(int(v) for v in y)),
        feature_dim=x.shape[1],
        params={"k": params.k},
        state={"x": x, "y": y},
    )


def _vote(d2: np.ndarray, y: np.ndarray, k: int) -> int:
    order = np.lexsort((np.arange(d2.size), d2))[:k]
    members: dict[int, list[int]] = {}
    for idx in order:
        members.setdefault(int(y[idx]), []).append(int(idx))
    best = max(len(v) for v in members.values())
    tied = [label for label, idxs in members.items() if len(idxs) == best]
    if len(tied) == 1:
        return tied[0]
    return min(tied, key=lambda label: min((d2[i], i) for i in members[label]))


def knn_predict(model: TrainedModel, x) -> int:
    query = model.check_dim(x)
    d2 = ((model.state["x"] - query) ** 2).sum(axis=1)
    return _vote(d2, model.state["y"], model.params["k"])


def knn_predict_batch(model: TrainedModel, queries: np.ndarray) -> np.ndarray:
    """Row-by-row prediction; identical verdicts to knn_predict."""
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != model.feature_dim:
        raise InputError(f"expected (n, {model.feature_dim}) query matrix")
    train = model.state["x"]
    y = model.state["y"]
    k = model.params["k"]
    out = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        # same arithmetic as knn_predict so tie handling agrees exactly
        row = ((train - queries[i]) ** 2).sum(axis=1)
        out[i] = _vote(row, y, k)
    return out
