import time

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from unlabeled_risk.core.classifier import ClassifierParams, Sample
from unlabeled_risk.core.data.dataset import Dataset
from unlabeled_risk.core.data.synthetic import SynthConfig, generate_synthetic
from unlabeled_risk.core.errors import ConfigError, DegenerateDataError, NumericalError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.risk.estimator import empirical_risk
from unlabeled_risk.core.train.supervised import (
    SupervisedConfig,
    empirical_risk_gradient,
    empirical_risk_value,
    error_rate,
    train_supervised_baseline,
)
from unlabeled_risk.core.train.trace import TEST_COLUMNS, TRACE_COLUMNS, TraceRecord, TrainTrace
from unlabeled_risk.core.train.unsupervised import (
    EvaluationHook,
    GradDescentConfig,
    GridSearchConfig,
    RefitMode,
    SplitEvaluationHook,
    WindowMode,
    train_gradient_descent,
    train_grid_search,
    unsupervised_risk_at,
)

MARGINALS = LabelMarginals.binary(0.7)


@pytest.fixture(scope="module")
def one_dimensional():
    """
    x | y ~ N(y, 1) with p(Y=1) = 0.7.
    """
    rng = np.random.default_rng(17)
    labels = np.where(rng.random(2000) < 0.7, 1, -1)
    features = (labels + rng.standard_normal(labels.size))[:, None]
    return Dataset(features, labels)


@pytest.fixture(scope="module")
def dense_scan(one_dimensional):
    grid = np.linspace(0.2, 5.0, 481)
    risks = [
        unsupervised_risk_at(ClassifierParams([t]), one_dimensional, MARGINALS, "log")[0]
        for t in grid
    ]
    return grid, np.array([report.estimate for report in risks])


class TestErrorRate:
    def test_examples(self):
        data = Dataset([[1.0], [-2.0], [0.5], [0.0]], labels=[1, -1, -1, 1])
        assert error_rate(ClassifierParams([1.0]), data) == 0.25

    def test_zero_margin_predicts_positive(self):
        data = Dataset([[0.0, 0.0]], labels=[-1])
        assert error_rate(ClassifierParams([1.0, -1.0]), data) == 1.0

    def test_sample_list(self):
        samples = [Sample([2.0], 1), Sample([1.0], -1)]
        assert error_rate(ClassifierParams([1.0]), samples) == 0.5


class TestSupervisedBaseline:
    @pytest.mark.parametrize("loss", ["exp", "log", "hinge"])
    def test_gradient_matches_finite_differences(self, loss, rng):
        features = rng.normal(size=(50, 3))
        labels = np.where(rng.random(50) < 0.6, 1, -1)
        weights = rng.normal(size=3)
        h = 1e-6
        numeric = [
            (
                empirical_risk_value(features, labels, weights + h * e, loss)
                - empirical_risk_value(features, labels, weights - h * e, loss)
            )
            / (2 * h)
            for e in np.eye(3)
        ]
        analytic = empirical_risk_gradient(features, labels, weights, loss)
        assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_separable_log_loss(self):
        data = Dataset([[1.0], [-1.0]], labels=[1, -1])
        theta = train_supervised_baseline(data, "log")
        assert empirical_risk(data, theta, "log").estimate < 0.01

    def test_recovers_planted_direction(self, planted_small):
        data, reference = planted_small
        theta = train_supervised_baseline(data, "log", SupervisedConfig(max_iterations=2000))
        cosine = theta.weights @ reference.weights / np.linalg.norm(theta.weights)
        assert cosine > 0.9

    def test_divergence_gives_up(self):
        data = Dataset([[1.0], [-1.0], [-3.0]], labels=[1, -1, 1])
        config = SupervisedConfig(step_size=1e6, max_iterations=500)
        with pytest.raises(NumericalError):
            train_supervised_baseline(data, "exp", config)

    def test_multiclass_loss_rejected(self, planted_small):
        with pytest.raises(ConfigError):
            train_supervised_baseline(planted_small[0], "multiclass-log")


class TestUnsupervisedRisk:
    def test_zero_classifier_is_degenerate(self, planted_small):
        data, _ = planted_small
        with pytest.raises(DegenerateDataError):
            unsupervised_risk_at(ClassifierParams(np.zeros(data.d)), data, MARGINALS, "log")

    def test_scale_changes_the_risk(self, planted_small):
        data, reference = planted_small
        small, _ = unsupervised_risk_at(reference, data, MARGINALS, "log")
        large, _ = unsupervised_risk_at(reference.scaled(3.0), data, MARGINALS, "log")
        assert small.estimate != pytest.approx(large.estimate, rel=1e-3)

    def test_close_to_supervised_risk(self, planted_small):
        data, reference = planted_small
        theta = reference.scaled(5.0)
        estimate, _ = unsupervised_risk_at(theta, data.without_labels(), MARGINALS, "log")
        supervised = empirical_risk(data, theta, "log").estimate
        assert abs(estimate.estimate - supervised) / supervised < 0.2


class TestGradientDescent:
    def test_zero_step_leaves_theta(self, planted_small):
        data, _ = planted_small
        theta0 = np.full(data.d, 0.5)
        theta, trace = train_gradient_descent(
            data, MARGINALS, "log", GradDescentConfig(step_size=0.0), theta0=theta0
        )
        assert_array_equal(theta.weights, theta0)
        assert len(trace) == 1
        assert trace.status == "stalled"

    def test_moves_monotonically_toward_minimizer(self, one_dimensional, dense_scan):
        grid, risks = dense_scan
        minimizer = grid[np.argmin(risks)]
        iterates = []

        def remember(params):
            iterates.append(params.weights[0])
            return 0.0, 0.0

        _, trace = train_gradient_descent(
            one_dimensional,
            MARGINALS,
            "log",
            GradDescentConfig(step_size=0.5, max_iterations=15),
            theta0=[0.5],
            eval_hook=remember,
        )
        assert minimizer > 0.5
        assert trace.risks[-1] < trace.risks[0]
        assert np.all(np.diff(iterates) > -1e-3)
        assert iterates[-1] <= minimizer + 0.02

    def test_trace_has_supervised_columns(self, planted_small):
        data, _ = planted_small
        train, held_out = data.split(0.5, seed=1)
        _, trace = train_gradient_descent(
            train.without_labels(),
            MARGINALS,
            "log",
            GradDescentConfig(max_iterations=3, seed=4),
            eval_hook=EvaluationHook(held_out, "log"),
        )
        frame = trace.to_frame()
        assert list(frame.columns) == TRACE_COLUMNS
        assert frame["risk_sup"].notna().all()
        assert frame["error_rate"].between(0, 1).all()

    def test_split_hook_adds_test_columns(self, planted_small):
        data, _ = planted_small
        train, test = data.split(0.5, seed=1)
        theta, trace = train_gradient_descent(
            train.without_labels(),
            MARGINALS,
            "log",
            GradDescentConfig(max_iterations=2, seed=4),
            eval_hook=SplitEvaluationHook(train, test, MARGINALS, "log"),
        )
        frame = trace.to_frame()
        assert list(frame.columns) == TRACE_COLUMNS + TEST_COLUMNS
        last = frame.iloc[-1]
        assert last["risk_sup"] == pytest.approx(empirical_risk(train, theta, "log").estimate)
        assert last["risk_sup_test"] == pytest.approx(empirical_risk(test, theta, "log").estimate)
        assert last["error_rate"] == pytest.approx(error_rate(theta, test))
        expected, _ = unsupervised_risk_at(theta, test, MARGINALS, "log")
        assert last["risk_unsup_test"] == pytest.approx(expected.estimate, rel=1e-6)

    def test_iterations_at_moderate_size_are_fast(self):
        config = SynthConfig(d=20, n=5000, p_positive=0.7, target_accuracy=0.93, seed=3, centered=True)
        data, _ = generate_synthetic(config)
        start = time.perf_counter()
        _, trace = train_gradient_descent(
            data.without_labels(), MARGINALS, "log", GradDescentConfig(max_iterations=3, tolerance=0.0, seed=1)
        )
        elapsed = time.perf_counter() - start
        assert len(trace) == 4
        assert elapsed < 60.0

    @pytest.mark.parametrize("refit", ["cold", "frozen"])
    def test_refit_modes_run(self, planted_small, refit):
        data, reference = planted_small
        _, trace = train_gradient_descent(
            data,
            MARGINALS,
            "hinge",
            GradDescentConfig(max_iterations=2, refit=refit),
            theta0=reference.scaled(2.0),
        )
        assert 1 <= len(trace) <= 3
        assert np.all(np.isfinite(trace.risks))

    def test_threads_do_not_change_results(self, planted_small):
        data, reference = planted_small
        config = GradDescentConfig(max_iterations=2)
        serial, _ = train_gradient_descent(data, MARGINALS, "log", config, theta0=reference)
        parallel, _ = train_gradient_descent(
            data, MARGINALS, "log", config, theta0=reference, threads=4
        )
        assert_array_equal(serial.weights, parallel.weights)

    def test_theta0_dimension(self, planted_small):
        with pytest.raises(ConfigError):
            train_gradient_descent(planted_small[0], MARGINALS, "log", theta0=[1.0, 2.0])

    def test_uniform_marginals(self, planted_small):
        with pytest.raises(ConfigError):
            train_gradient_descent(planted_small[0], LabelMarginals.binary(0.5), "log")

    def test_unknown_refit_mode(self):
        with pytest.raises(ConfigError):
            GradDescentConfig(refit="lazy")


class TestGridSearch:
    def test_tiny_window_is_a_no_op(self, planted_small):
        data, reference = planted_small
        config = GridSearchConfig(grid_points=3, window=1e-4)
        theta, trace = train_grid_search(data, MARGINALS, "log", config, theta0=reference)
        assert_array_equal(theta.weights, reference.weights)
        assert len(trace) == 1
        assert trace.status == "converged"

    def test_finds_scan_minimizer(self, one_dimensional, dense_scan):
        grid, risks = dense_scan
        config = GridSearchConfig(window=2.0)
        theta, trace = train_grid_search(one_dimensional, MARGINALS, "log", config, theta0=[1.0])
        assert abs(theta.weights[0] - grid[np.argmin(risks)]) < 0.02
        assert trace.status == "converged"
        assert np.all(np.diff(trace.iterations) > 0)

    def test_literal_window(self):
        config = GridSearchConfig(grid_points=5, window_mode="literal")
        assert config.window_mode is WindowMode.LITERAL
        assert config.initial_window == 20.0

    @pytest.mark.parametrize(
        "kwargs",
        [{"grid_points": 4}, {"grid_points": 1}, {"window": 0.0}, {"shrink": 1.0}],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            GridSearchConfig(**kwargs)

    def test_default_refit(self):
        assert GridSearchConfig().refit is RefitMode.WARM_START


class TestTrainTrace:
    def test_iterations_must_increase(self):
        trace = TrainTrace()
        trace.append(TraceRecord(0, 0.5))
        with pytest.raises(ConfigError):
            trace.append(TraceRecord(0, 0.4))

    def test_csv_has_empty_optional_fields(self, tmp_path):
        trace = TrainTrace()
        trace.append(TraceRecord(0, 0.5))
        trace.append(TraceRecord(1, 0.25, 0.3, 0.1))
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,risk_unsup,risk_sup,error_rate"
        assert lines[1] == "0,0.5,,"
        frame = pd.read_csv(path)
        assert frame["iter"].tolist() == [0, 1]

    def test_test_columns_appear_when_recorded(self, tmp_path):
        trace = TrainTrace()
        trace.append(TraceRecord(0, 0.5, 0.4, 0.1, 0.45, 0.42))
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS + TEST_COLUMNS)
        frame = pd.read_csv(path)
        assert frame.iloc[0].tolist() == [0, 0.5, 0.4, 0.1, 0.45, 0.42]


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", ["grad", "grid"])
def test_planted_training_matches_supervised_baseline(algorithm):
    config = SynthConfig(
        d=20, n=10_000, p_positive=0.7, target_accuracy=0.93, seed=11, centered=True
    )
    data, _ = generate_synthetic(config)
    train, test = data.split(0.5, seed=0)
    marginals = LabelMarginals.binary(0.7)

    baseline = train_supervised_baseline(train, "log")
    hook = EvaluationHook(test, "log")
    if algorithm == "grad":
        theta, trace = train_gradient_descent(
            train.without_labels(),
            marginals,
            "log",
            GradDescentConfig(max_iterations=100, seed=2),
            eval_hook=hook,
        )
    else:
        theta, trace = train_grid_search(
            train.without_labels(),
            marginals,
            "log",
            GridSearchConfig(max_sweeps=15, seed=2),
            eval_hook=hook,
        )

    assert error_rate(theta, test) <= error_rate(baseline, test) + 0.05
    risks = trace.risks
    assert np.median(risks[-10:]) <= np.median(risks[:10])


@pytest.mark.slow
@pytest.mark.parametrize("algorithm", ["grad", "grid"])
def test_unsupervised_risk_tracks_labeled_risk(algorithm):
    config = SynthConfig(
        d=20, n=10_000, p_positive=0.7, target_accuracy=0.95, family="gaussian-shift", seed=13, centered=True
    )
    data, reference = generate_synthetic(config)
    rng = np.random.default_rng(5)
    theta0 = reference.weights + rng.normal(0.0, 1.0 / np.sqrt(config.d), size=config.d)
    hook = EvaluationHook(data, "log")
    if algorithm == "grad":
        _, trace = train_gradient_descent(
            data.without_labels(),
            MARGINALS,
            "log",
            GradDescentConfig(max_iterations=20, seed=2),
            theta0=theta0,
            eval_hook=hook,
        )
    else:
        _, trace = train_grid_search(
            data.without_labels(),
            MARGINALS,
            "log",
            GridSearchConfig(max_sweeps=3, seed=2),
            eval_hook=hook,
            theta0=theta0,
        )

    frame = trace.to_frame()
    assert frame["risk_sup"].notna().all()
    relative = (frame["risk_unsup"] - frame["risk_sup"]).abs() / frame["risk_sup"]
    assert (relative < 0.1).all(), relative.max()
