import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from unlabeled_risk.core.classifier import ClassifierParams, Sample
from unlabeled_risk.core.data.dataset import Dataset, standardize
from unlabeled_risk.core.data.loaders import (
    load_dense_csv,
    load_sparse,
    load_theta,
    save_dense_csv,
    save_sparse,
    save_theta,
)
from unlabeled_risk.core.data.synthetic import (
    SynthConfig,
    calibrate_shift,
    generate_synthetic,
    midpoint_accuracy,
    reference_classifier,
)
from unlabeled_risk.core.errors import ConfigError, DataError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestDenseCsv:
    def test_labeled_last_column(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2,1\n3,4,-1\n")
        data = load_dense_csv(path, has_labels=True)
        assert_array_equal(data.features, [[1, 2], [3, 4]])
        assert_array_equal(data.labels, [1, -1])

    def test_unlabeled_with_header_and_crlf(self, tmp_path):
        path = write(tmp_path / "data.csv", "a,b\r\n0.5,-1e-3\r\n2,3\r\n")
        data = load_dense_csv(path, has_labels=False, header=True)
        assert not data.labeled
        assert_allclose(data.features, [[0.5, -1e-3], [2, 3]])

    def test_first_label_column(self, tmp_path):
        path = write(tmp_path / "data.csv", "-1,7,8\n1,9,10\n")
        data = load_dense_csv(path, has_labels=True, label_column=0)
        assert_array_equal(data.features, [[7, 8], [9, 10]])
        assert_array_equal(data.labels, [-1, 1])

    def test_multiclass_labels(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,0,3\n0,1,2\n")
        data = load_dense_csv(path, has_labels=True, multiclass=True)
        assert_array_equal(data.labels, [3, 2])

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="empty"):
            load_dense_csv(write(tmp_path / "data.csv", ""), has_labels=False)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_dense_csv(tmp_path / "absent.csv", has_labels=False)

    def test_short_row(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2,3\n4,5\n")
        with pytest.raises(DataError, match="row 2"):
            load_dense_csv(path, has_labels=False)

    def test_long_row(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2\n4,5,6\n")
        with pytest.raises(DataError):
            load_dense_csv(path, has_labels=False)

    def test_non_numeric_field(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2\n4,abc\n")
        with pytest.raises(DataError, match="row 2, column 2"):
            load_dense_csv(path, has_labels=False)

    def test_unknown_label(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2,0\n")
        with pytest.raises(DataError, match="unknown label"):
            load_dense_csv(path, has_labels=True)

    def test_declared_dimension(self, tmp_path):
        path = write(tmp_path / "data.csv", "1,2,1\n")
        assert load_dense_csv(path, has_labels=True, dim=2).d == 2
        with pytest.raises(DataError, match="declared"):
            load_dense_csv(path, has_labels=True, dim=3)

    def test_round_trip(self, tmp_path, rng):
        data = Dataset(rng.normal(size=(30, 4)), labels=np.where(rng.random(30) < 0.5, 1, -1))
        path = tmp_path / "data.csv"
        save_dense_csv(data, path)
        assert load_dense_csv(path, has_labels=True) == data


class TestSparse:
    def test_example(self, tmp_path):
        path = write(tmp_path / "data.txt", "1 1:0.5 3:2\n-1 2:1\n\n")
        data = load_sparse(path, 3)
        assert_array_equal(data.features, [[0.5, 0, 2], [0, 1, 0]])
        assert_array_equal(data.labels, [1, -1])

    def test_unlabeled_lines(self, tmp_path):
        data = load_sparse(write(tmp_path / "data.txt", "? 1:1\n? 2:1\n"), 2)
        assert not data.labeled

    def test_index_out_of_range(self, tmp_path):
        path = write(tmp_path / "data.txt", "1 1:1\n-1 4:1\n")
        with pytest.raises(DataError, match="line 2"):
            load_sparse(path, 3)

    def test_non_increasing_indices(self, tmp_path):
        path = write(tmp_path / "data.txt", "1 2:1 2:3\n")
        with pytest.raises(DataError, match="strictly increasing"):
            load_sparse(path, 3)

    def test_malformed_entry(self, tmp_path):
        with pytest.raises(DataError, match="malformed"):
            load_sparse(write(tmp_path / "data.txt", "1 1-2\n"), 3)

    def test_mixed_labeled_and_unlabeled(self, tmp_path):
        with pytest.raises(DataError):
            load_sparse(write(tmp_path / "data.txt", "1 1:1\n? 1:2\n"), 2)

    def test_round_trip(self, tmp_path, rng):
        features = np.where(rng.random((20, 6)) < 0.3, rng.normal(size=(20, 6)), 0.0)
        data = Dataset(features, labels=np.where(rng.random(20) < 0.5, 1, -1))
        path = tmp_path / "data.txt"
        save_sparse(data, path)
        assert load_sparse(path, 6) == data


class TestTheta:
    def test_single_column_is_one_vector(self, tmp_path):
        params = load_theta(write(tmp_path / "theta.csv", "1\n2\n3\n"))
        assert len(params) == 1
        assert_array_equal(params[0].weights, [1, 2, 3])

    def test_rows_are_classifiers(self, tmp_path):
        params = [ClassifierParams([1.0, 0.1]), ClassifierParams([-2.0, 1 / 3])]
        path = tmp_path / "theta.csv"
        save_theta(params, path)
        assert load_theta(path) == params


class TestDataset:
    def test_from_samples(self):
        data = Dataset.from_samples([Sample([1, 2], 1), Sample([3, 4], -1)])
        assert (data.n, data.d) == (2, 2)
        assert data.labeled

    def test_mixed_labels_rejected(self):
        with pytest.raises(DataError, match="Sample 1"):
            Dataset.from_samples([Sample([1], 1), Sample([2])])

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="Sample 1"):
            Dataset.from_samples([Sample([1, 2]), Sample([3])])

    def test_non_finite_features(self):
        with pytest.raises(DataError, match="Sample 1"):
            Dataset([[1.0], [np.nan]])

    def test_split(self, rng):
        data = Dataset(rng.normal(size=(10, 2)), labels=[1, -1] * 5)
        first, second = data.split(0.3, seed=2)
        assert (first.n, second.n) == (3, 7)
        merged = np.vstack([first.features, second.features])
        assert sorted(map(tuple, merged)) == sorted(map(tuple, data.features))

    def test_split_fraction(self, rng):
        with pytest.raises(ConfigError):
            Dataset(rng.normal(size=(10, 2))).split(1.0)


class TestStandardize:
    def test_example(self):
        data = Dataset([[1.0, 10.0], [3.0, 10.0]])
        scaled, table = standardize(data)
        assert_allclose(scaled.features, [[-1.0, 0.0], [1.0, 0.0]])
        assert_allclose(table["mean"], [2.0, 10.0])
        assert_allclose(table["std"], [1.0, 1.0])
        assert table["constant"].tolist() == [False, True]

    def test_population_moments(self, rng):
        scaled, _ = standardize(Dataset(rng.normal(3.0, 5.0, size=(200, 3))))
        assert_allclose(scaled.features.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(scaled.features.std(axis=0), 1.0, rtol=1e-12)

    def test_idempotent(self, rng):
        once, _ = standardize(Dataset(rng.normal(size=(50, 2))))
        twice, _ = standardize(once)
        assert_allclose(twice.features, once.features, atol=1e-12)

    def test_keeps_labels(self):
        scaled, _ = standardize(Dataset([[1.0], [2.0]], labels=[1, -1]))
        assert_array_equal(scaled.labels, [1, -1])

    def test_single_sample(self):
        with pytest.raises(DataError):
            standardize(Dataset([[1.0, 2.0]]))


class TestSynthetic:
    def test_deterministic(self):
        config = SynthConfig(d=4, n=300, p_positive=0.7, target_accuracy=0.9, seed=5)
        first, _ = generate_synthetic(config)
        second, _ = generate_synthetic(config)
        assert first == second

    def test_seeds_differ(self):
        first, _ = generate_synthetic(SynthConfig(d=4, n=300, p_positive=0.7, target_accuracy=0.9))
        second, _ = generate_synthetic(
            SynthConfig(d=4, n=300, p_positive=0.7, target_accuracy=0.9, seed=1)
        )
        assert first != second

    def test_positive_fraction(self):
        n = 20_000
        data, _ = generate_synthetic(
            SynthConfig(d=3, n=n, p_positive=0.8, target_accuracy=0.9, seed=8)
        )
        standard_error = np.sqrt(0.8 * 0.2 / n)
        assert abs(data.positive_fraction() - 0.8) < 3 * standard_error

    def test_calibrated_accuracy_on_fresh_draw(self):
        config = SynthConfig(d=100, n=100_000, p_positive=0.7, target_accuracy=0.95, seed=12)
        data, theta = generate_synthetic(config)
        assert 0.94 <= midpoint_accuracy(data, theta) <= 0.96

    def test_gaussian_family(self):
        config = SynthConfig(
            d=10, n=20_000, p_positive=0.6, target_accuracy=0.85, family="gaussian-shift"
        )
        data, theta = generate_synthetic(config)
        assert 0.83 <= midpoint_accuracy(data, theta) <= 0.87

    def test_centered_margins_straddle_zero(self):
        config = SynthConfig(
            d=5, n=20_000, p_positive=0.7, target_accuracy=0.9, seed=2, centered=True
        )
        data, theta = generate_synthetic(config)
        margins = data.features @ theta.weights
        positive = data.labels == 1
        assert margins[positive].mean() > 0 > margins[~positive].mean()
        assert abs(margins[positive].mean() + margins[~positive].mean()) < 0.05

    @pytest.mark.parametrize("d", [10, 100])
    @pytest.mark.parametrize("target", [0.7, 0.8, 0.9, 0.95])
    def test_calibration_reaches_target(self, d, target):
        config = SynthConfig(d=d, n=20_000, p_positive=0.7, target_accuracy=target, seed=d)
        delta, reached = calibrate_shift(config)
        assert delta > 0
        assert abs(reached - target) <= 0.005
        data, theta = generate_synthetic(config, shift=delta)
        assert abs(midpoint_accuracy(data, theta) - target) < 0.015

    def test_reference_classifier(self):
        assert_allclose(reference_classifier(4).weights, [0.5] * 4)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"target_accuracy": 0.5},
            {"target_accuracy": 1.0},
            {"p_positive": 0.0},
            {"family": "laplace-shift"},
            {"d": 0},
        ],
    )
    def test_invalid_config(self, kwargs):
        base = {"d": 3, "n": 10, "p_positive": 0.7, "target_accuracy": 0.9}
        with pytest.raises(ConfigError):
            SynthConfig(**{**base, **kwargs})

    def test_unreachable_accuracy(self):
        with pytest.raises(ConfigError, match="unattainable"):
            calibrate_shift(
                SynthConfig(
                    d=1, n=10, p_positive=0.7, target_accuracy=0.999, family="gaussian-shift"
                )
            )
