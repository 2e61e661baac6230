"""
Risk estimation and training of linear classifiers from unlabeled data and
known label marginals.
"""

from unlabeled_risk.core.classifier import ClassifierParams, MarginValues, Sample, margin, margins_batch
from unlabeled_risk.core.errors import (
    ConfigError,
    DataError,
    DegenerateDataError,
    IdentifiabilityError,
    NumericalError,
    SingularInformationError,
    UnlabeledRiskError,
)
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.em import fit_fixed_weight_mixture, loglikelihood
from unlabeled_risk.core.mixture.mixture_fit import FitConfig, MixtureFit
from unlabeled_risk.core.risk.estimator import RiskReport, empirical_risk, plugin_risk
from unlabeled_risk.core.risk.losses import LossSpec, loss_eval

__version__ = "0.1.0"
