import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.special import ndtr

from unlabeled_risk.core.asymptotics.fisher import score_vectors
from unlabeled_risk.core.errors import (
    ConfigError,
    DataError,
    DegenerateDataError,
    IdentifiabilityError,
    NumericalError,
)
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.em import (
    fit_fixed_weight_mixture,
    fit_multiclass_mixtures,
    fit_single_gaussian,
    fit_warm_started_mixtures,
    loglikelihood,
    posterior_responsibilities,
    refit_with_responsibilities,
)
from unlabeled_risk.core.mixture.mixture_fit import FitConfig, MixtureFit

LOG_N0 = -0.5 * math.log(2 * math.pi)


def parameter_error(fit, means, stds):
    return float(np.max(np.abs(np.concatenate([fit.means - means, fit.stds - stds]))))


class TestLoglikelihood:
    def test_identical_components_uniform_weights(self):
        marginals = LabelMarginals.binary(0.5)
        fit = MixtureFit(marginals, means=(0, 0), stds=(1, 1))
        assert_allclose(loglikelihood([0.0], marginals, fit), LOG_N0, rtol=1e-14)

    def test_weights_marginalize_out(self):
        marginals = LabelMarginals.binary(0.7)
        fit = MixtureFit(marginals, means=(0, 0), stds=(1, 1))
        assert_allclose(loglikelihood([0.0], marginals, fit), LOG_N0, rtol=1e-14)

    def test_empty_values(self, separated_fit):
        with pytest.raises(DataError):
            loglikelihood([], separated_fit.marginals, separated_fit)

    def test_zero_sigma(self):
        marginals = LabelMarginals.binary(0.7)
        fit = MixtureFit(marginals, means=(1, -1), stds=(0, 1))
        with pytest.raises(ConfigError):
            loglikelihood([0.0, 1.0], marginals, fit)


class TestFixedWeightFit:
    def test_recovers_separated_mixture(self, sample_margins):
        values, _ = sample_margins(100_000, 0.7, (2.0, -2.0), (1.0, 1.0), seed=1)
        fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
        assert fit.converged
        assert parameter_error(fit, [2.0, -2.0], [1.0, 1.0]) < 0.05

    def test_single_gaussian_data_does_not_crash(self, rng):
        values = rng.standard_normal(20_000)
        fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
        assert np.all(np.isfinite(fit.means))
        # Overlapping components are only weakly identified.
        assert abs(fit.mean(1) - fit.mean(-1)) < 0.5

    def test_uniform_marginals_rejected(self, rng):
        with pytest.raises(IdentifiabilityError):
            fit_fixed_weight_mixture(rng.normal(size=100), LabelMarginals.binary(0.5))

    def test_too_few_values(self):
        with pytest.raises(DegenerateDataError):
            fit_fixed_weight_mixture([0.1, 0.2, 0.3], LabelMarginals.binary(0.7))

    def test_identical_values(self):
        with pytest.raises(DegenerateDataError):
            fit_fixed_weight_mixture(np.full(50, 2.5), LabelMarginals.binary(0.7))

    def test_loglikelihood_is_monotone(self, sample_margins):
        values, _ = sample_margins(2000, 0.7, (1.0, -0.5), (1.0, 2.0), seed=7)
        fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7), FitConfig(restarts=1))
        history = np.array(fit.history)
        steps = np.diff(history)
        assert np.all(steps >= -1e-9 * np.abs(history[1:]))

    def test_reported_loglik_matches_evaluation(self, sample_margins):
        values, _ = sample_margins(1000, 0.8, (1.5, -1.0), (0.7, 1.2), seed=2)
        marginals = LabelMarginals.binary(0.8)
        fit = fit_fixed_weight_mixture(values, marginals)
        assert_allclose(fit.loglik, loglikelihood(values, marginals, fit), rtol=1e-10)

    def test_deterministic(self, sample_margins):
        values, _ = sample_margins(3000, 0.7, (1.0, -1.0), (1.0, 1.0), seed=4)
        marginals = LabelMarginals.binary(0.7)
        first = fit_fixed_weight_mixture(values, marginals, FitConfig(seed=9))
        second = fit_fixed_weight_mixture(values, marginals, FitConfig(seed=9))
        assert_array_equal(first.means, second.means)
        assert_array_equal(first.stds, second.stds)

    def test_restarts_agree_on_large_sample(self, sample_margins):
        values, _ = sample_margins(100_000, 0.7, (2.0, -2.0), (1.0, 1.0), seed=11)
        marginals = LabelMarginals.binary(0.7)
        first = fit_fixed_weight_mixture(values, marginals, FitConfig(seed=1))
        second = fit_fixed_weight_mixture(values, marginals, FitConfig(seed=2, restarts=3))
        assert parameter_error(first, second.means, second.stds) < 0.02

    def test_warm_start_is_used(self, sample_margins):
        values, _ = sample_margins(5000, 0.7, (2.0, -2.0), (1.0, 1.0), seed=5)
        marginals = LabelMarginals.binary(0.7)
        cold = fit_fixed_weight_mixture(values, marginals)
        warm = fit_fixed_weight_mixture(values, marginals, FitConfig(restarts=1), initial=cold)
        assert warm.loglik >= cold.loglik - 1e-9 * abs(cold.loglik)

    def test_swapped_weights_swap_the_components(self, sample_margins):
        values, _ = sample_margins(50_000, 0.7, (2.5, -2.5), (1.0, 1.0), seed=6)
        right = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
        swapped = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.3))
        assert right.mean(1) > 2.0 and right.mean(-1) < -2.0
        # The heavier component follows the heavier weight, not the label.
        assert swapped.mean(-1) > 2.0 and swapped.mean(1) < -2.0

    def test_consistency(self, sample_margins):
        small, large = [], []
        for seed in range(20):
            for n, errors in ((100, small), (10_000, large)):
                values, _ = sample_margins(n, 0.7, (2.0, -2.0), (1.0, 1.0), seed=seed)
                fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
                errors.append(parameter_error(fit, [2.0, -2.0], [1.0, 1.0]))
        assert np.median(large) < np.median(small)

    def test_variance_floor(self):
        values = np.concatenate([np.zeros(70), np.linspace(-3, -1, 30)])
        fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
        assert np.all(fit.variances >= 1e-8 * values.var() * (1 - 1e-9))

    def test_invalid_init_order(self, rng):
        with pytest.raises(ConfigError):
            fit_fixed_weight_mixture(
                rng.normal(size=50), LabelMarginals.binary(0.7), init_order=(1, 2)
            )


class TestBatchedFits:
    @pytest.fixture
    def rows(self, sample_margins):
        settings = [((2.0, -2.0), (1.0, 1.0)), ((1.5, -1.0), (0.7, 1.2)), ((3.0, 0.0), (1.0, 2.0))]
        return np.vstack(
            [sample_margins(4000, 0.7, means, stds, seed=k)[0] for k, (means, stds) in enumerate(settings)]
        )

    def test_matches_single_fits(self, rows):
        marginals = LabelMarginals.binary(0.7)
        initial = fit_fixed_weight_mixture(rows[0], marginals)
        batched = fit_warm_started_mixtures(rows, marginals, initial, split_start=True)
        for values, fit in zip(rows, batched):
            single = fit_fixed_weight_mixture(values, marginals)
            assert parameter_error(fit, single.means, single.stds) < 1e-6
            assert_allclose(fit.loglik, loglikelihood(values, marginals, fit), rtol=1e-10)

    def test_polished_fit_is_stationary(self, rows):
        marginals = LabelMarginals.binary(0.7)
        for values in rows:
            fit = fit_fixed_weight_mixture(values, marginals)
            assert fit.converged
            assert np.all(np.abs(score_vectors(values, fit).sum(axis=0)) < 1e-6 * values.size)

    def test_rows_do_not_interact(self, rows):
        marginals = LabelMarginals.binary(0.7)
        initial = fit_fixed_weight_mixture(rows[1], marginals)
        together = fit_warm_started_mixtures(rows, marginals, initial)[1]
        alone = fit_warm_started_mixtures(rows[1:2], marginals, initial)[0]
        assert_allclose(together.means, alone.means, rtol=1e-9)
        assert_allclose(together.stds, alone.stds, rtol=1e-9)

    def test_constant_rows_are_skipped(self, rows):
        marginals = LabelMarginals.binary(0.7)
        initial = fit_fixed_weight_mixture(rows[0], marginals)
        batch = np.vstack([rows[0], np.full(rows.shape[1], 1.5)])
        fits = fit_warm_started_mixtures(batch, marginals, initial)
        assert fits[0] is not None and fits[1] is None

    def test_non_finite_margins_rejected(self, rows):
        marginals = LabelMarginals.binary(0.7)
        initial = fit_fixed_weight_mixture(rows[0], marginals)
        bad = rows.copy()
        bad[2, 5] = np.nan
        with pytest.raises(NumericalError):
            fit_warm_started_mixtures(bad, marginals, initial)


class TestFitConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"max_iterations": 0},
            {"loglik_rel_tolerance": 0.0},
            {"restarts": 0},
            {"variance_floor_factor": 0.0},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            FitConfig(**kwargs)


class TestMulticlassFits:
    def test_binary_reduction(self, rng):
        marginals = LabelMarginals.multiclass([0.7, 0.3])
        first = rng.normal(size=500)
        second = rng.normal(size=500)
        fits = fit_multiclass_mixtures([first, second], marginals)
        direct = fit_fixed_weight_mixture(first, marginals, init_order=(2, 1))
        assert_array_equal(fits[0].means, direct.means)
        assert_array_equal(fits[0].stds, direct.stds)

    def test_recovers_three_components(self):
        rng = np.random.default_rng(21)
        marginals = LabelMarginals.multiclass([0.5, 0.3, 0.2])
        # Per classifier k, the class-conditional means with class k on top.
        truth = np.array([[4.0, -4.0, 0.0], [-4.0, 4.0, 0.0], [-4.0, 0.0, 4.0]])
        labels = rng.choice(3, size=100_000, p=marginals.probabilities)
        margins = [row[labels] + rng.standard_normal(labels.size) for row in truth]

        fits = fit_multiclass_mixtures(margins, marginals)
        for fit, row in zip(fits, truth):
            assert np.max(np.abs(fit.means - row)) < 0.1
            assert np.max(np.abs(fit.stds - 1.0)) < 0.1

    def test_repeated_priors_rejected(self, rng):
        marginals = LabelMarginals.multiclass([0.4, 0.4, 0.2])
        with pytest.raises(IdentifiabilityError):
            fit_multiclass_mixtures([rng.normal(size=50)] * 3, marginals)

    def test_one_margin_vector_per_class(self, rng):
        marginals = LabelMarginals.multiclass([0.5, 0.3, 0.2])
        with pytest.raises(ConfigError):
            fit_multiclass_mixtures([rng.normal(size=50)] * 2, marginals)


class TestMixtureFit:
    def test_cdf_of_point_mass(self):
        fit = MixtureFit(LabelMarginals.binary(0.7), means=(1.0, -1.0), stds=(0.0, 1.0))
        assert_allclose(fit.cdf(1.0), 0.7 + 0.3 * ndtr(2.0), rtol=1e-12)
        assert_allclose(fit.cdf(0.999), 0.3 * ndtr(1.999), rtol=1e-12)

    def test_affine_transform(self, separated_fit):
        moved = separated_fit.affine(2.0, 1.0)
        assert_allclose(moved.means, [5.0, -3.0])
        assert_allclose(moved.stds, [2.0, 2.0])

    def test_eta_round_trip(self, separated_fit):
        eta = separated_fit.eta
        assert_allclose(eta, [2.0, -2.0, 1.0, 1.0])
        assert_allclose(separated_fit.with_eta(eta).stds, separated_fit.stds)

    def test_negative_std_rejected(self):
        with pytest.raises(ConfigError):
            MixtureFit(LabelMarginals.binary(0.7), means=(0, 0), stds=(1, -1))

    def test_single_gaussian_fit(self, rng):
        values = rng.normal(3.0, 2.0, size=5000)
        fit = fit_single_gaussian(values)
        assert_allclose(fit.means, [values.mean()])
        assert_allclose(fit.stds, [values.std()])
        assert fit.converged


class TestFrozenRefit:
    def test_same_margins_give_one_em_step(self, sample_margins):
        values, _ = sample_margins(2000, 0.7, (2.0, -2.0), (1.0, 1.0), seed=8)
        fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(0.7))
        responsibilities = posterior_responsibilities(values, fit)
        refit = refit_with_responsibilities(values, fit, responsibilities)
        assert_allclose(refit.means, fit.means, atol=1e-3)
        assert_allclose(refit.stds, fit.stds, atol=1e-3)

    def test_responsibilities_sum_to_one(self, separated_fit, rng):
        responsibilities = posterior_responsibilities(rng.normal(size=100), separated_fit)
        assert_allclose(responsibilities.sum(axis=1), 1.0, rtol=1e-12)
