"""Acceptance gate: one test per release criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The synthetic end-to-end runs (criteria 5-7) share module-scoped
fixtures; the full module takes a few minutes.
"""

import numpy as np
import pytest

import oracles
from conftest import make_patch, random_patch
from her2score.classifiers import (
    KnnParams,
    LabeledSample,
    SvmParams,
    kernel_matrix,
    knn_predict,
    knn_train,
    svm_pair_decisions,
    svm_train,
    tree_predict,
    tree_train,
)
from her2score.classifiers.mlp import init_weights, loss_and_gradients
from her2score.evaluation import (
    ConfusionMatrix,
    SyntheticCohortSpec,
    accuracy,
    generate_synthetic_cohort,
    run_lopo,
    sensitivity_specificity,
)
from her2score.features import (
    HistogramConfig,
    hsv_histogram,
    lbp_descriptor,
    pftas_descriptor,
    rgb_histogram,
)
from her2score.pipeline import (
    ClassifierSpec,
    ClassMode,
    FeatureCache,
    PipelineConfig,
    classify_slide_patches,
    occurrence_vector,
    predict_score,
    score_of,
    score_wsi,
    train_image_level,
    train_patient_level,
)

SCORE_CLASSES = ["0/1+", "2+", "3+"]
PUBLISHED_MATRICES = [
    [[24, 0, 0], [2, 11, 1], [0, 0, 13]],
    [[23, 1, 0], [1, 12, 1], [0, 0, 13]],
    [[23, 1, 0], [1, 12, 1], [0, 0, 13]],
]


def _announce(criterion: str, detail: str = ""):
    print(f"[acceptance] {criterion}: PASS {detail}".rstrip())


def _cohort_spec(seed: int) -> SyntheticCohortSpec:
    return SyntheticCohortSpec(
        cases_per_class=10,
        patches_per_slide=40,
        curated_per_slide=6,
        noise_rate=0.1,
        patch_size=250,
        class_mode=ClassMode.FOUR,
        seed=seed,
    )


def _pipeline_config(seed: int) -> PipelineConfig:
    return PipelineConfig(
        histogram=HistogramConfig(32),
        image_level=ClassifierSpec("knn", KnnParams(k=1)),
        patient_level=ClassifierSpec("svm"),
        class_mode=ClassMode.FOUR,
        include_noise_fraction=True,
        seed=seed,
    )


def _run_synthetic(seed: int):
    cases = generate_synthetic_cohort(_cohort_spec(seed))
    result = run_lopo(cases, _pipeline_config(seed))
    return cases, result


@pytest.fixture(scope="module")
def lopo_seed42():
    return _run_synthetic(42)


@pytest.fixture(scope="module")
def lopo_seed42_repeat():
    return _run_synthetic(42)


@pytest.fixture(scope="module")
def lopo_seed43():
    return _run_synthetic(43)


class TestCriterion1MetricArithmetic:
    def test_published_confusion_matrices(self):
        for grid in PUBLISHED_MATRICES:
            matrix = ConfusionMatrix(SCORE_CLASSES, np.array(grid))
            acc = 100.0 * accuracy(matrix)
            assert abs(round(acc, 2) - 94.12) <= 0.01
            assert sensitivity_specificity(matrix, "3+", "0/1+") == (1.0, 1.0)
        _announce("criterion 1 (metric arithmetic)", "3 matrices -> 94.12%, (1.0, 1.0)")


class TestCriterion2ClassifierOracles:
    def test_knn_equals_exhaustive_scan(self):
        rng = np.random.default_rng(2024)
        checked = 0
        for _ in range(100):
            n = int(rng.integers(5, 301))
            d = int(rng.integers(1, 21))
            k = int(rng.integers(1, min(9, n) + 1))
            x = rng.normal(size=(n, d))
            y = rng.integers(0, 4, size=n)
            model = knn_train([LabeledSample(x[i], int(y[i])) for i in range(n)], KnnParams(k=k))
            for q in rng.normal(size=(3, d)):
                assert knn_predict(model, q) == oracles.knn_scan_oracle(x, y, q, k)
                checked += 1
        _announce("criterion 2a (KNN oracle)", f"{checked} queries over 100 instances, exact")

    def test_svm_matches_qp_oracle(self):
        rng = np.random.default_rng(77)
        worst = 0.0
        for trial in range(20):
            n = int(rng.integers(6, 21))
            d = int(rng.integers(2, 8))
            sep = rng.uniform(2.0, 4.0)
            x = np.vstack(
                [rng.normal(-sep / 2, 1.0, size=(n, d)), rng.normal(sep / 2, 1.0, size=(n, d))]
            )
            y = np.array([0] * n + [1] * n)
            params = SvmParams(
                c=float(rng.choice([0.5, 1.0, 10.0])),
                gamma=float(rng.choice([0.1, 0.5, 1.0])),
                kernel="linear" if trial % 2 == 0 else "rbf",
            )
            model = svm_train([LabeledSample(x[i], int(y[i])) for i in range(2 * n)], params)
            kern = lambda p, q: kernel_matrix(params, p, q)
            y_pm = np.where(y == 0, 1.0, -1.0)
            alpha, bias = oracles.svm_qp_oracle(x, y_pm, params.c, kern)
            queries = np.vstack([x, rng.normal(0, sep, size=(8, d))])
            mine = svm_pair_decisions(model, queries)[:, 0]
            ref = oracles.svm_oracle_decisions(x, y_pm, alpha, bias, queries, kern)
            worst = max(worst, float(np.abs(mine - ref).max()))
        assert worst < 1e-4
        _announce("criterion 2b (SVM vs QP oracle)", f"20 instances, worst |diff| {worst:.2e}")

    def test_tree_resubstitution(self):
        rng = np.random.default_rng(55)
        for _ in range(30):
            n = int(rng.integers(10, 301))
            d = int(rng.integers(2, 21))
            x = rng.normal(size=(n, d))  # continuous draws: vectors distinct
            y = rng.integers(0, 4, size=n)
            model = tree_train([LabeledSample(x[i], int(y[i])) for i in range(n)])
            assert all(tree_predict(model, x[i]) == y[i] for i in range(n))
        _announce("criterion 2c (tree resubstitution)", "30 instances, 100% training accuracy")


class TestCriterion3MlpGradients:
    def test_gradients_match_central_differences(self):
        rng = np.random.default_rng(31)
        worst = 0.0
        for point in range(20):
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
        _announce("criterion 3 (MLP gradient check)", f"20 points, worst rel err {worst:.2e}")


class TestCriterion4DescriptorContracts:
    def test_lbp_contract(self):
        rng = np.random.default_rng(4001)
        for _ in range(30):
            size = int(rng.integers(5, 17))
            px = rng.integers(0, 200, size=(size, size, 3), dtype=np.uint8)
            vec = lbp_descriptor(make_patch(px))
            assert vec.dim == 59
            assert abs(vec.values.sum() - 1.0) < 1e-9
            offset = int(rng.integers(1, 56))
            shifted = lbp_descriptor(make_patch(px + np.uint8(offset)))
            assert np.array_equal(vec.values, shifted.values)
        _announce("criterion 4a (LBP contract)", "59 bins, sum 1, shift-invariant")

    def test_pftas_contract(self):
        rng = np.random.default_rng(4002)
        for trial in range(50):
            size = int(rng.integers(8, 25))
            patch = random_patch(rng, size=size)
            vec = pftas_descriptor(patch)
            assert vec.dim == 162
            assert vec.values.min() >= 0.0 and vec.values.max() <= 1.0
            blocks = vec.values.reshape(18, 9)
            for block in blocks:
                total = block.sum()
                assert total == 0.0 or abs(total - 1.0) < 1e-9
            ref = oracles.pftas_oracle(patch.data.pixels)
            assert np.array_equal(vec.values, ref), f"trial {trial} diverged from oracle"
        _announce("criterion 4b (PFTAS contract)", "50 patches, bit-for-bit oracle match")

    def test_histogram_oracles(self):
        rng = np.random.default_rng(4003)
        for _ in range(20):
            patch = random_patch(rng, size=int(rng.integers(6, 25)))
            assert np.array_equal(
                rgb_histogram(patch, HistogramConfig(32)).values,
                oracles.rgb_histogram_oracle(patch.data.pixels, 32),
            )
            assert np.array_equal(
                hsv_histogram(patch, HistogramConfig(32)).values,
                oracles.hsv_histogram_oracle(patch.data.pixels, 32),
            )
        big = random_patch(rng, size=250)
        assert np.array_equal(
            rgb_histogram(big, HistogramConfig(32)).values,
            oracles.rgb_histogram_oracle(big.data.pixels, 32),
        )
        assert np.array_equal(
            hsv_histogram(big, HistogramConfig(32)).values,
            oracles.hsv_histogram_oracle(big.data.pixels, 32),
        )
        _announce("criterion 4c (histogram oracles)", "brute-force counts match, incl. 250x250")


class TestCriterion5SyntheticLopo:
    def test_end_to_end_lopo(self, lopo_seed42):
        cases, result = lopo_seed42
        assert len(cases) == 30
        assert result.accuracy >= 0.90
        assert result.sensitivity == 1.0
        assert result.specificity == 1.0
        _announce(
            "criterion 5 (synthetic LOPO)",
            f"accuracy {result.accuracy:.4f}, sensitivity 1.0, specificity 1.0",
        )


class TestCriterion6Determinism:
    def test_same_seed_byte_identical(self, lopo_seed42, lopo_seed42_repeat, tmp_path):
        _, first = lopo_seed42
        _, second = lopo_seed42_repeat
        a = tmp_path / "first.json"
        b = tmp_path / "second.json"
        a.write_text(first.to_json())
        b.write_text(second.to_json())
        assert a.read_bytes() == b.read_bytes()
        _announce("criterion 6a (determinism)", "same seed -> byte-identical result file")

    def test_seed_change_stays_within_five_points(self, lopo_seed42, lopo_seed43):
        _, first = lopo_seed42
        _, other = lopo_seed43
        delta = abs(first.accuracy - other.accuracy)
        assert delta <= 0.05
        _announce("criterion 6b (seed stability)", f"|acc(42) - acc(43)| = {delta:.4f}")


class TestCriterion7PipelineInvariants:
    def test_occurrence_vectors_sum_to_one(self, lopo_seed42):
        cases, _ = lopo_seed42
        config = _pipeline_config(42)
        cache = FeatureCache(config)
        image_model = train_image_level(cases, config, cache)
        for case in cases:
            counts = classify_slide_patches(image_model, case, cache)
            occ = occurrence_vector(counts, config.include_noise_fraction, case.slide_id)
            assert abs(sum(occ.fractions.values()) - 1.0) < 1e-9
        _announce("criterion 7a (occurrence sums)", "30 slides, fractions sum to 1")

    def test_no_patient_leaks_into_training(self, lopo_seed42):
        cases, result = lopo_seed42
        sentinel = cases[0].patient_id
        all_patients = {c.patient_id for c in cases}
        seen_as_held = set()
        for fold in result.folds:
            held = fold["held_out"]
            training = set(fold["training_patients"])
            assert held not in training
            assert training == all_patients - {held}
            seen_as_held.add(held)
            if held != sentinel:
                assert sentinel in training
        assert sentinel in seen_as_held
        _announce("criterion 7b (no leakage)", "sentinel patient isolated in its own fold only")

    def test_score_wsi_equals_composition(self, lopo_seed42):
        cases, _ = lopo_seed42
        config = _pipeline_config(42)
        cache = FeatureCache(config)
        image_model = train_image_level(cases, config, cache)
        occurrences = []
        truths = []
        for case in cases:
            counts = classify_slide_patches(image_model, case, cache)
            occurrences.append(occurrence_vector(counts, True, case.slide_id))
            truths.append(score_of(case.ground_truth, config.class_mode))
        patient_model = train_patient_level(occurrences, truths, config)
        for case in cases:
            composed = predict_score(
                patient_model,
                occurrence_vector(
                    classify_slide_patches(image_model, case, cache), True, case.slide_id
                ),
            )
            assert score_wsi(image_model, patient_model, case, cache) == composed
        _announce("criterion 7c (composition)", "score_wsi == manual three-stage composition")
