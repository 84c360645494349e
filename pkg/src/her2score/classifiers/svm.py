"""Soft-margin SVM trained by sequential minimal optimization.

The working pair is always the maximal KKT violating pair; convergence is
declared when the violation gap m_up - m_low drops below KKT_TOL. Degenerate
curvature in the two-variable subproblem is floored at NUM_EPS. Multi-class
problems train one machine per class pair (one-vs-one) and predict by
pairwise voting with ties going to the lowest class index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, InputError, MissingClassError
from .base import LabeledSample, TrainedModel, samples_to_arrays

# a 1e-3 stop would leave up to ~5e-4 slack in decision values; 1e-6 keeps
# the trained decision function well within 1e-4 of the exact dual optimum
KKT_TOL = 1e-6
NUM_EPS = 1e-12
_MAX_ITER = 200_000


@dataclass(frozen=True)
class SvmParams:
    c: float = 1.0
    gamma: float = 0.1
    kernel: str = "rbf"

    def __post_init__(self):
        if self.c <= 0:
            raise InputError("c must be positive")
        if self.kernel not in ("linear", "rbf"):
            raise InputError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "rbf" and self.gamma <= 0:
            raise InputError("gamma must be positive for the rbf kernel")


def kernel_matrix(params: SvmParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if params.kernel == "linear":
        return a @ b.T
    d2 = (
        (a**2).sum(axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + (b**2).sum(axis=1)[None, :]
    )
    return np.exp(-params.gamma * np.maximum(d2, 0.0))


def smo_solve(k: np.ndarray, y: np.ndarray, c: float, tol: float = KKT_TOL):
    """Solve the binary soft-margin dual for labels y in {-1, +1}.

    Returns (alpha, bias, converged). k is the full training kernel matrix.
    By construction every multiplier stays in [0, c] and sum(alpha * y)
    stays 0 exactly (both variables of each update move together).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - sum(a) at alpha = 0
    diag = np.diag(k).copy()
    snap = 1e-12 * max(1.0, c)
    converged = False
    for _ in range(_MAX_ITER):
        neg_yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.nonzero(up)[0]
        low_idx = np.nonzero(low)[0]
        i = int(up_idx[np.argmax(neg_yg[up_idx])])
        j = int(low_idx[np.argmin(neg_yg[low_idx])])
        m_up = neg_yg[i]
        m_low = neg_yg[j]
        if m_up - m_low <= tol:
            converged = True
            break
        quad = diag[i] + diag[j] - 2.0 * k[i, j]
        if quad <= 0.0:
            quad = NUM_EPS
        t = (m_up - m_low) / quad
        cap_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        t = min(t, cap_i, cap_j)
        if t <= 0.0:
            converged = True
            break
        new_i = alpha[i] + y[i] * t
        new_j = alpha[j] - y[j] * t
        if new_i < snap:
            new_i = 0.0
        elif new_i > c - snap:
            new_i = c
        if new_j < snap:
            new_j = 0.0
        elif new_j > c - snap:
            new_j = c
        delta_i = new_i - alpha[i]
        delta_j = new_j - alpha[j]
        grad += (y * y[i] * k[:, i]) * delta_i + (y * y[j] * k[:, j]) * delta_j
        alpha[i] = new_i
        alpha[j] = new_j

    free = (alpha > 0.0) & (alpha < c)
    neg_yg = -y * grad
    if free.any():
        bias = float(neg_yg[free].mean())
    else:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        hi = neg_yg[up].max() if up.any() else 0.0
        lo = neg_yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, converged


def svm_train(samples, params: SvmParams = SvmParams()) -> TrainedModel:
    x, y = samples_to_arrays(samples)
    class_set = sorted(set(int(v) for v in y))
    if len(class_set) < 2:
        raise MissingClassError("SVM training needs at least two classes")
    gram = kernel_matrix(params, x, x)
    machines = []
    for a, b in itertools.combinations(range(len(class_set)), 2):
        mask = (y == class_set[a]) | (y == class_set[b])
        idx = np.nonzero(mask)[0]
        pair_y = np.where(y[idx] == class_set[a], 1.0, -1.0)
        alpha, bias, converged = smo_solve(gram[np.ix_(idx, idx)], pair_y, params.c)
        sv = alpha > 0.0
        machines.append(
            {
                "first": a,
                "second": b,
                "sv_x": x[idx[sv]],
                "sv_coef": alpha[sv] * pair_y[sv],
                "bias": bias,
                "alpha": alpha,
                "pair_y": pair_y,
                "converged": bool(converged),
            }
        )
    return TrainedModel(
        kind="svm",
        class_set=class_set,
        feature_dim=x.shape[1],
        params={"c": params.c, "gamma": params.gamma, "kernel": params.kernel},
        state={"machines": machines},
    )


def _params_of(model: TrainedModel) -> SvmParams:
    return SvmParams(
        c=model.params["c"], gamma=model.params["gamma"], kernel=model.params["kernel"]
    )


def svm_pair_decisions(model: TrainedModel, queries: np.ndarray) -> np.ndarray:
    """Decision value of every pairwise machine for every query row."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    params = _params_of(model)
    out = np.empty((queries.shape[0], len(model.state["machines"])))
    for m_idx, machine in enumerate(model.state["machines"]):
        if len(machine["sv_x"]):
            k = kernel_matrix(params, queries, machine["sv_x"])
            out[:, m_idx] = k @ machine["sv_coef"] + machine["bias"]
        else:
            out[:, m_idx] = machine["bias"]
    return out


def svm_predict_batch(model: TrainedModel, queries: np.ndarray) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    decisions = svm_pair_decisions(model, queries)
    votes = np.zeros((queries.shape[0], len(model.class_set)), dtype=np.int64)
    for m_idx, machine in enumerate(model.state["machines"]):
        positive = decisions[:, m_idx] >= 0.0
        votes[positive, machine["first"]] += 1
        votes[~positive, machine["second"]] += 1
    # argmax keeps the first maximum: ties go to the lowest class index
    picks = np.argmax(votes, axis=1)
    labels = np.array(model.class_set, dtype=np.int64)
    return labels[picks]


def svm_predict(model: TrainedModel, x) -> int:
    query = model.check_dim(x)
    return int(svm_predict_batch(model, query[None, :])[0])


def default_svm_grid() -> list[SvmParams]:
    """Exhaustive (c, gamma, kernel) product; gamma is inert for linear cells."""
    c_values = [2.0**e for e in range(-5, 17, 2)]
    gamma_values = [2.0**e for e in range(-15, 5, 2)]
    grid = []
    for kernel in ("linear", "rbf"):
        for c in c_values:
            for gamma in gamma_values:
                grid.append(SvmParams(c=c, gamma=gamma, kernel=kernel))
    return grid


def stratified_folds(y: np.ndarray, n_folds: int) -> list[np.ndarray]:
    """Deterministic stratified assignment: per class, deal members round-robin."""
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for label in sorted(set(int(v) for v in y)):
        members = np.nonzero(y == label)[0]
        for position, idx in enumerate(members):
            folds[position % n_folds].append(int(idx))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def _cv_correct(x: np.ndarray, y: np.ndarray, params: SvmParams, folds: list[np.ndarray]) -> int:
    correct = 0
    all_idx = np.arange(len(y))
    for test_idx in folds:
        if test_idx.size == 0:
            continue
        train_mask = np.ones(len(y), dtype=bool)
        train_mask[test_idx] = False
        train_idx = all_idx[train_mask]
        if len(set(int(v) for v in y[train_idx])) < 2:
            continue  # untrainable split: its test samples count as misses
        model = svm_train(
            [LabeledSample(x[i], int(y[i])) for i in train_idx], params
        )
        predictions = svm_predict_batch(model, x[test_idx])
        correct += int((predictions == y[test_idx]).sum())
    return correct


def grid_search_svm(samples, grid=None, folds: int = 3, trace: list | None = None) -> SvmParams:
    """Exhaustive stratified-CV search over (c, gamma, kernel) combinations.

    Accuracy ties resolve to smaller c, then smaller gamma, then linear
    before rbf. A trace list, when given, collects per-cell CV accuracy.
    """
    x, y = samples_to_arrays(samples)
    if grid is None:
        grid = default_svm_grid()
    grid = list(grid)
    if not grid:
        raise InputError("empty parameter grid")
    if folds < 2:
        raise InputError("folds must be >= 2")
    if len(y) < folds:
        raise DataError(f"{len(y)} samples cannot fill {folds} folds")
    fold_sets = stratified_folds(y, folds)
    cache: dict[tuple, int] = {}
    best_key = None
    best_params = None
    for params in grid:
        cache_key = (params.kernel, params.c, params.gamma if params.kernel == "rbf" else None)
        if cache_key not in cache:
            cache[cache_key] = _cv_correct(x, y, params, fold_sets)
        correct = cache[cache_key]
        if trace is not None:
            trace.append(
                {
                    "c": params.c,
                    "gamma": params.gamma,
                    "kernel": params.kernel,
                    "cv_accuracy": correct / len(y),
                }
            )
        key = (-correct, params.c, params.gamma, 0 if params.kernel == "linear" else 1)
        if best_key is None or key < best_key:
            best_key = key
            best_params = params
    return best_params
