import numpy as np
import pytest

import oracles
from her2score.classifiers import (
    KnnParams,
    LabeledSample,
    MlpParams,
    SvmParams,
    TreeParams,
    grid_search_svm,
    kernel_matrix,
    knn_predict,
    knn_predict_batch,
    knn_train,
    mlp_predict,
    mlp_predict_batch,
    mlp_train,
    predict,
    smo_solve,
    stratified_folds,
    svm_pair_decisions,
    svm_predict,
    svm_predict_batch,
    svm_train,
    tree_predict,
    tree_train,
)
from her2score.classifiers.mlp import init_weights, loss_and_gradients
from her2score.errors import (
    DataError,
    DimensionMismatchError,
    EmptyTrainingSetError,
    InputError,
    MissingClassError,
)


def _samples(x, y):
    return [LabeledSample(x[i], int(y[i])) for i in range(len(y))]


class TestKnn:
    def test_single_training_point(self):
        model = knn_train([LabeledSample([1.0, 2.0], 5)], KnnParams(k=1))
        assert knn_predict(model, [100.0, -3.0]) == 5

    def test_exact_match_query(self, rng):
        x = rng.normal(size=(10, 3))
        y = np.arange(10) % 3
        model = knn_train(_samples(x, y), KnnParams(k=1))
        for i in range(10):
            assert knn_predict(model, x[i]) == y[i]

    def test_matches_exhaustive_scan(self, rng):
        x = rng.normal(size=(200, 2))
        y = rng.integers(0, 4, size=200)
        for k in (1, 3, 5):
            model = knn_train(_samples(x, y), KnnParams(k=k))
            queries = rng.normal(size=(50, 2))
            for q in queries:
                assert knn_predict(model, q) == oracles.knn_scan_oracle(x, y, q, k)

    def test_batch_agrees_with_single(self, rng):
        x = rng.normal(size=(40, 5))
        y = rng.integers(0, 3, size=40)
        model = knn_train(_samples(x, y), KnnParams(k=3))
        queries = rng.normal(size=(15, 5))
        batch = knn_predict_batch(model, queries)
        assert np.array_equal(batch, [knn_predict(model, q) for q in queries])

    def test_distance_tie_goes_to_earliest_index(self):
        # two training points equidistant from the query
        model = knn_train(
            [LabeledSample([1.0], 7), LabeledSample([-1.0], 3)], KnnParams(k=1)
        )
        assert knn_predict(model, [0.0]) == 7

    def test_vote_tie_goes_to_closest_label(self):
        samples = [
            LabeledSample([0.0], 0),
            LabeledSample([1.0], 0),
            LabeledSample([0.4], 1),
            LabeledSample([0.6], 1),
        ]
        model = knn_train(samples, KnnParams(k=4))
        # both labels hold two votes; label 1 owns the closest member to 0.5
        assert knn_predict(model, [0.5]) == 1

    def test_errors(self):
        with pytest.raises(EmptyTrainingSetError):
            knn_train([])
        with pytest.raises(InputError):
            knn_train([LabeledSample([0.0], 0)], KnnParams(k=2))
        model = knn_train([LabeledSample([0.0, 1.0], 0)])
        with pytest.raises(DimensionMismatchError):
            knn_predict(model, [0.0, 1.0, 2.0])


class TestTree:
    def test_pure_set_single_leaf(self, rng):
        x = rng.normal(size=(12, 3))
        model = tree_train(_samples(x, np.full(12, 4)))
        assert model.state["feature"].size == 1
        assert tree_predict(model, rng.normal(size=3)) == 4

    def test_one_dimensional_separable(self):
        x = np.array([[0.0], [1.0], [10.0], [11.0]])
        y = np.array([0, 0, 1, 1])
        model = tree_train(_samples(x, y))
        root_threshold = model.state["threshold"][0]
        assert 1.0 < root_threshold < 10.0
        assert all(tree_predict(model, x[i]) == y[i] for i in range(4))

    def test_perfect_resubstitution_on_distinct_vectors(self, rng):
        for _ in range(10):
            x = rng.normal(size=(30, 4))
            y = rng.integers(0, 3, size=30)
            model = tree_train(_samples(x, y))
            assert all(tree_predict(model, x[i]) == y[i] for i in range(30))

    def test_unsplittable_node_majority(self):
        # identical feature vectors with mixed labels: majority leaf,
        # tie resolved to the lowest label
        samples = [LabeledSample([1.0, 1.0], label) for label in (2, 1, 1, 2)]
        model = tree_train(samples)
        assert tree_predict(model, [1.0, 1.0]) == 1

    def test_max_depth_cap(self, rng):
        x = rng.normal(size=(40, 3))
        y = rng.integers(0, 2, size=40)
        model = tree_train(_samples(x, y), TreeParams(max_depth=1))
        assert model.state["feature"].size <= 3

    def test_params_validation(self):
        with pytest.raises(InputError):
            TreeParams(min_samples_split=1)


class TestMlp:
    def test_xor_converges(self):
        x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 0])
        model = mlp_train(
            _samples(x, y),
            MlpParams(hidden_units=8, max_epochs=2000, loss_tol=1e-7, seed=0),
        )
        assert np.array_equal(mlp_predict_batch(model, x), y)

    def test_separable_blobs(self, rng):
        a = rng.normal([-2.0, -2.0], 0.5, size=(40, 2))
        b = rng.normal([2.0, 2.0], 0.5, size=(40, 2))
        x = np.vstack([a, b])
        y = np.array([0] * 40 + [1] * 40)
        model = mlp_train(_samples(x, y), MlpParams(hidden_units=16, seed=1))
        assert (mlp_predict_batch(model, x) == y).mean() >= 0.99

    def test_gradients_match_finite_differences(self, rng):
        worst = 0.0
        for point in range(5):
            weights = init_weights(4, 6, 3, seed=point)
            for key in weights:
                weights[key] = weights[key] + rng.normal(0, 0.5, size=weights[key].shape)
            x = rng.normal(size=(5, 4))
            y = np.zeros((5, 3))
            y[np.arange(5), rng.integers(0, 3, 5)] = 1.0
            _, grads = loss_and_gradients(weights, x, y, 1e-4)
            eps = 1e-6
            for key in weights:
                flat = weights[key].ravel()
                g = grads[key].ravel()
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + eps
                    lp, _ = loss_and_gradients(weights, x, y, 1e-4)
                    flat[idx] = orig - eps
                    lm, _ = loss_and_gradients(weights, x, y, 1e-4)
                    flat[idx] = orig
                    fd = (lp - lm) / (2 * eps)
                    worst = max(worst, abs(g[idx] - fd) / max(1.0, abs(g[idx]), abs(fd)))
        assert worst < 1e-4

    def test_single_class_rejected(self):
        with pytest.raises(MissingClassError):
            mlp_train([LabeledSample([0.0], 1), LabeledSample([1.0], 1)])

    def test_deterministic_given_seed(self, rng):
        x = rng.normal(size=(20, 3))
        y = rng.integers(0, 2, size=20)
        params = MlpParams(hidden_units=5, max_epochs=20, seed=9)
        a = mlp_train(_samples(x, y), params)
        b = mlp_train(_samples(x, y), params)
        assert np.array_equal(a.state["w1"], b.state["w1"])
        assert np.array_equal(a.state["w2"], b.state["w2"])


class TestSvm:
    def test_two_point_boundary_at_zero(self):
        samples = [LabeledSample([-1.0], 0), LabeledSample([1.0], 1)]
        model = svm_train(samples, SvmParams(c=1.0, kernel="linear"))
        assert svm_predict(model, [-1.0]) == 0
        assert svm_predict(model, [1.0]) == 1
        assert abs(svm_pair_decisions(model, np.array([[0.0]]))[0, 0]) < 1e-9

    def test_dual_feasibility(self, rng):
        for kernel in ("linear", "rbf"):
            x = rng.normal(size=(30, 3))
            y = rng.integers(0, 2, size=30)
            c = 2.0
            model = svm_train(_samples(x, y), SvmParams(c=c, gamma=0.7, kernel=kernel))
            machine = model.state["machines"][0]
            alpha = machine["alpha"]
            assert alpha.min() >= 0.0 and alpha.max() <= c + 1e-12
            assert abs(float(alpha @ machine["pair_y"])) <= 1e-6

    def test_kkt_violations_within_tolerance(self, rng):
        x = rng.normal(size=(25, 2))
        y_pm = np.where(rng.random(25) < 0.5, 1.0, -1.0)
        y_pm[0], y_pm[1] = 1.0, -1.0  # both classes present
        params = SvmParams(c=1.5, gamma=0.4, kernel="rbf")
        k = kernel_matrix(params, x, x)
        tol = 1e-6
        alpha, bias, converged = smo_solve(k, y_pm, params.c, tol=tol)
        assert converged
        grad = ((y_pm[:, None] * y_pm[None, :]) * k) @ alpha - 1.0
        neg_yg = -y_pm * grad
        up = ((y_pm > 0) & (alpha < params.c)) | ((y_pm < 0) & (alpha > 0))
        low = ((y_pm < 0) & (alpha < params.c)) | ((y_pm > 0) & (alpha > 0))
        assert neg_yg[up].max() - neg_yg[low].min() <= tol

    def test_decision_values_match_qp_oracle(self, rng):
        for kernel in ("linear", "rbf"):
            a = rng.normal([-2.0, -1.5], 0.6, size=(10, 2))
            b = rng.normal([2.0, 1.5], 0.6, size=(10, 2))
            x = np.vstack([a, b])
            y = np.array([0] * 10 + [1] * 10)
            params = SvmParams(c=1.0, gamma=0.5, kernel=kernel)
            model = svm_train(_samples(x, y), params)
            kern = lambda p, q: kernel_matrix(params, p, q)
            y_pm = np.where(y == 0, 1.0, -1.0)
            alpha, bias = oracles.svm_qp_oracle(x, y_pm, params.c, kern)
            queries = np.vstack([x, rng.normal(0, 2, size=(10, 2))])
            mine = svm_pair_decisions(model, queries)[:, 0]
            ref = oracles.svm_oracle_decisions(x, y_pm, alpha, bias, queries, kern)
            assert np.abs(mine - ref).max() < 1e-4

    def test_multiclass_one_vs_one(self, rng):
        centers = np.array([[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
        x = np.vstack([rng.normal(c, 0.4, size=(15, 2)) for c in centers])
        y = np.repeat([0, 1, 2], 15)
        model = svm_train(_samples(x, y), SvmParams(c=10.0, gamma=0.5, kernel="rbf"))
        assert len(model.state["machines"]) == 3
        assert (svm_predict_batch(model, x) == y).mean() == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(MissingClassError):
            svm_train([LabeledSample([0.0], 1), LabeledSample([1.0], 1)])


class TestGridSearch:
    def test_single_cell(self, rng):
        x = rng.normal(size=(12, 2))
        y = np.array([0, 1] * 6)
        only = SvmParams(c=3.0, gamma=0.2, kernel="rbf")
        assert grid_search_svm(_samples(x, y), [only]) == only

    def test_rbf_beats_linear_on_ring_data(self, rng):
        # inner blob vs surrounding ring: linearly inseparable
        inner = rng.normal(0, 0.4, size=(24, 2))
        angles = rng.uniform(0, 2 * np.pi, size=24)
        ring = np.stack([3.0 * np.cos(angles), 3.0 * np.sin(angles)], axis=1)
        ring += rng.normal(0, 0.2, size=ring.shape)
        x = np.vstack([inner, ring])
        y = np.array([0] * 24 + [1] * 24)
        grid = [
            SvmParams(c=1.0, gamma=1.0, kernel="linear"),
            SvmParams(c=1.0, gamma=1.0, kernel="rbf"),
        ]
        best = grid_search_svm(_samples(x, y), grid, folds=3)
        assert best.kernel == "rbf"

    def test_tie_prefers_smaller_c(self, rng):
        a = rng.normal([-4.0, 0.0], 0.3, size=(9, 2))
        b = rng.normal([4.0, 0.0], 0.3, size=(9, 2))
        x = np.vstack([a, b])
        y = np.array([0] * 9 + [1] * 9)
        grid = [
            SvmParams(c=8.0, gamma=0.5, kernel="rbf"),
            SvmParams(c=2.0, gamma=0.5, kernel="rbf"),
        ]
        best = grid_search_svm(_samples(x, y), grid, folds=3)
        assert best.c == 2.0

    def test_trace_records_cells(self, rng):
        x = rng.normal(size=(9, 2))
        y = np.array([0, 1, 2] * 3)
        trace = []
        grid_search_svm(
            _samples(x, y),
            [SvmParams(c=1.0, gamma=0.5, kernel="rbf"), SvmParams(c=2.0, gamma=0.5, kernel="rbf")],
            folds=3,
            trace=trace,
        )
        assert len(trace) == 2 and all("cv_accuracy" in cell for cell in trace)

    def test_fewer_samples_than_folds(self):
        samples = [LabeledSample([0.0], 0), LabeledSample([1.0], 1)]
        with pytest.raises(DataError):
            grid_search_svm(samples, [SvmParams()], folds=3)

    def test_stratified_folds_cover_everything(self, rng):
        y = rng.integers(0, 3, size=20)
        folds = stratified_folds(y, 4)
        joined = np.concatenate(folds)
        assert sorted(joined.tolist()) == list(range(20))


class TestDispatch:
    def test_predict_dispatch(self, rng):
        x = rng.normal(size=(10, 2))
        y = np.array([0, 1] * 5)
        samples = _samples(x, y)
        for model in (
            knn_train(samples),
            tree_train(samples),
            mlp_train(samples, MlpParams(hidden_units=4, max_epochs=10, seed=0)),
            svm_train(samples, SvmParams(c=1.0, kernel="linear")),
        ):
            assert predict(model, x[0]) in (0, 1)
