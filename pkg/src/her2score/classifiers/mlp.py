"""Single-hidden-layer perceptron: ReLU, softmax output, cross-entropy loss.

Training is mini-batch adaptive-moment gradient descent with seeded
symmetric-uniform initialization scaled by fan-in + fan-out. The L2
penalty is added to the batch objective as 0.5 * l2 * (|W1|^2 + |W2|^2) / batch,
biases excluded. Training stops at max_epochs or once the epoch loss has
improved by less than loss_tol for no_improvement_epochs epochs in a row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError, MissingClassError
from .base import TrainedModel, samples_to_arrays

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpParams:
    hidden_units: int = 100
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int | None = None  # None means min(200, n_samples)
    l2_penalty: float = 1e-4
    loss_tol: float = 1e-4
    no_improvement_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1:
            raise InputError("hidden_units must be >= 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise InputError("max_epochs must be >= 1")


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradients(weights: dict, x: np.ndarray, y_one_hot: np.ndarray, l2: float):
    """Batch objective and its analytic gradients for every parameter.

    Exposed so tests can compare the backward pass against central finite
    differences.
    """
    w1, b1, w2, b2 = weights["w1"], weights["b1"], weights["w2"], weights["b2"]
    n = x.shape[0]
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    p = _softmax(z2)
    eps = np.finfo(np.float64).tiny
    data_loss = -np.sum(y_one_hot * np.log(p + eps)) / n
    penalty = 0.5 * l2 * (np.sum(w1 * w1) + np.sum(w2 * w2)) / n
    loss = data_loss + penalty

    dz2 = (p - y_one_hot) / n
    grads = {
        "w2": a1.T @ dz2 + l2 * w2 / n,
        "b2": dz2.sum(axis=0),
    }
    da1 = dz2 @ w2.T
    dz1 = da1 * (z1 > 0.0)
    grads["w1"] = x.T @ dz1 + l2 * w1 / n
    grads["b1"] = dz1.sum(axis=0)
    return float(loss), grads


def init_weights(n_features: int, hidden_units: int, n_classes: int, seed: int) -> dict:
    """Symmetric uniform initialization with limit sqrt(6 / (fan_in + fan_out))."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (n_features + hidden_units))
    lim2 = np.sqrt(6.0 / (hidden_units + n_classes))
    return {
        "w1": rng.uniform(-lim1, lim1, size=(n_features, hidden_units)),
        "b1": np.zeros(hidden_units),
        "w2": rng.uniform(-lim2, lim2, size=(hidden_units, n_classes)),
        "b2": np.zeros(n_classes),
    }


def mlp_train(samples, params: MlpParams = MlpParams()) -> TrainedModel:
    x, y = samples_to_arrays(samples)
    class_set = sorted(set(int(v) for v in y))
    if len(class_set) < 2:
        raise MissingClassError("MLP training needs at least two classes")
    index_of = {label: i for i, label in enumerate(class_set)}
    y_idx = np.array([index_of[int(v)] for v in y])
    n, d = x.shape
    k = len(class_set)
    one_hot = np.zeros((n, k))
    one_hot[np.arange(n), y_idx] = 1.0

    weights = init_weights(d, params.hidden_units, k, params.seed)
    adam_m = {key: np.zeros_like(w) for key, w in weights.items()}
    adam_v = {key: np.zeros_like(w) for key, w in weights.items()}
    step = 0
    batch = params.batch_size if params.batch_size is not None else min(200, n)
    batch = max(1, min(batch, n))
    rng = np.random.default_rng(params.seed + 1)

    best_loss = np.inf
    stale_epochs = 0
    epochs_run = 0
    for _ in range(params.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = loss_and_gradients(weights, x[idx], one_hot[idx], params.l2_penalty)
            epoch_loss += loss * idx.size
            step += 1
            for key in weights:
                adam_m[key] = _ADAM_BETA1 * adam_m[key] + (1 - _ADAM_BETA1) * grads[key]
                adam_v[key] = _ADAM_BETA2 * adam_v[key] + (1 - _ADAM_BETA2) * grads[key] ** 2
                m_hat = adam_m[key] / (1 - _ADAM_BETA1**step)
                v_hat = adam_v[key] / (1 - _ADAM_BETA2**step)
                weights[key] = weights[key] - params.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        epoch_loss /= n
        epochs_run += 1
        if epoch_loss > best_loss - params.loss_tol:
            stale_epochs += 1
            if stale_epochs >= params.no_improvement_epochs:
                break
        else:
            stale_epochs = 0
        best_loss = min(best_loss, epoch_loss)

    return TrainedModel(
        kind="mlp",
        class_set=class_set,
        feature_dim=d,
        params={
            "hidden_units": params.hidden_units,
            "learning_rate": params.learning_rate,
            "max_epochs": params.max_epochs,
            "batch_size": batch,
            "l2_penalty": params.l2_penalty,
            "loss_tol": params.loss_tol,
            "no_improvement_epochs": params.no_improvement_epochs,
            "seed": params.seed,
        },
        state={**weights, "epochs_run": epochs_run},
    )


def _scores(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    state = model.state
    a1 = np.maximum(x @ state["w1"] + state["b1"], 0.0)
    return a1 @ state["w2"] + state["b2"]


def mlp_predict(model: TrainedModel, x) -> int:
    query = model.check_dim(x)
    scores = _scores(model, query[None, :])[0]
    return model.class_set[int(np.argmax(scores))]


def mlp_predict_batch(model: TrainedModel, queries: np.ndarray) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    scores = _scores(model, queries)
    picks = np.argmax(scores, axis=1)
    labels = np.array(model.class_set, dtype=np.int64)
    return labels[picks]
