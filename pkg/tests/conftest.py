import numpy as np
import pytest

from unlabeled_risk.core.data.synthetic import SynthConfig, generate_synthetic
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.mixture_fit import MixtureFit


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def separated_fit():
    return MixtureFit(LabelMarginals.binary(0.7), means=(2.0, -2.0), stds=(1.0, 1.0))


@pytest.fixture
def sample_margins():
    """
    Labeled margins drawn from a two-component Gaussian mixture.
    """

    def sample(n, p_positive, means, stds, seed):
        fit = MixtureFit(LabelMarginals.binary(p_positive), means=means, stds=stds)
        return fit.sample(n, np.random.default_rng(seed))

    return sample


@pytest.fixture(scope="session")
def planted_small():
    config = SynthConfig(d=5, n=2000, p_positive=0.7, target_accuracy=0.9, seed=3, centered=True)
    return generate_synthetic(config)
