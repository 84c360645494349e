"""From-scratch classifiers used at both pipeline levels."""

from .base import LabeledSample, TrainedModel, samples_to_arrays
from .knn import KnnParams, knn_predict, knn_predict_batch, knn_train
from .mlp import MlpParams, mlp_predict, mlp_predict_batch, mlp_train
from .model_io import FORMAT_VERSION, load_model, model_id, save_model
from .svm import (
    KKT_TOL,
    SvmParams,
    default_svm_grid,
    grid_search_svm,
    kernel_matrix,
    smo_solve,
    stratified_folds,
    svm_pair_decisions,
    svm_predict,
    svm_predict_batch,
    svm_train,
)
from .tree import TreeParams, tree_predict, tree_train

_PREDICT = {
    "knn": knn_predict,
    "tree": tree_predict,
    "mlp": mlp_predict,
    "svm": svm_predict,
}

_PREDICT_BATCH = {
    "knn": knn_predict_batch,
    "mlp": mlp_predict_batch,
    "svm": svm_predict_batch,
}


def predict(model: TrainedModel, x) -> int:
    """Dispatch single-sample prediction on the model kind."""
    return _PREDICT[model.kind](model, x)


def predict_batch(model: TrainedModel, queries) -> "np.ndarray":
    """Dispatch batch prediction; falls back to a loop for tree models."""
    import numpy as np

    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if model.kind in _PREDICT_BATCH:
        return _PREDICT_BATCH[model.kind](model, queries)
    return np.array([_PREDICT[model.kind](model, q) for q in queries], dtype=np.int64)


__all__ = [
    "FORMAT_VERSION",
    "KKT_TOL",
    "KnnParams",
    "LabeledSample",
    "MlpParams",
    "SvmParams",
    "TrainedModel",
    "TreeParams",
    "default_svm_grid",
    "grid_search_svm",
    "kernel_matrix",
    "knn_predict",
    "knn_predict_batch",
    "knn_train",
    "load_model",
    "mlp_predict",
    "mlp_predict_batch",
    "mlp_train",
    "model_id",
    "predict",
    "predict_batch",
    "samples_to_arrays",
    "save_model",
    "smo_solve",
    "stratified_folds",
    "svm_pair_decisions",
    "svm_predict",
    "svm_predict_batch",
    "svm_train",
    "tree_predict",
    "tree_train",
]
