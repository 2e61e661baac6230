from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from unlabeled_risk.core.classifier import ClassifierParams, margins_batch
from unlabeled_risk.core.errors import ConfigError, DataError
from unlabeled_risk.core.mixture.mixture_fit import MixtureFit
from unlabeled_risk.core.risk.expectation import conditional_expected_loss
from unlabeled_risk.core.risk.losses import LossSpec

PLUGIN = "plugin"
EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class RiskReport:
    """
    A risk value and how it was obtained.

    ``fit`` holds the MixtureFit of a plug-in estimate (a list of fits for the
    multiclass estimator); ``asympt_std`` is the delta-method standard error
    of the estimate when it has been computed.
    """

    estimate: float
    method: str
    loss: LossSpec
    n: int
    fit: Optional[Union[MixtureFit, Sequence[MixtureFit]]] = None
    asympt_std: Optional[float] = None

    def __post_init__(self):
        if self.method not in (PLUGIN, EMPIRICAL):
            raise ConfigError(f"Unknown risk method '{self.method}'.")
        if not self.estimate >= 0:
            raise ConfigError(f"Risk estimates are non-negative, got {self.estimate}.")

    def as_dict(self) -> dict:
        report = {
            "estimate": float(self.estimate),
            "method": self.method,
            "loss": self.loss.name,
            "n": int(self.n),
        }
        if self.asympt_std is not None:
            report["asympt_std"] = float(self.asympt_std)
        return report


def empirical_risk(labeled, params: ClassifierParams, loss) -> RiskReport:
    """
    Supervised empirical risk: the mean binary loss over labeled samples.

    ``labeled`` is a Dataset or a sequence of labeled Sample objects.
    """
    loss = LossSpec(loss)
    if loss.is_multiclass:
        raise ConfigError("Use empirical_risk_multiclass for multiclass losses.")
    features, labels = labeled_arrays(labeled)
    if np.any((labels != 1) & (labels != -1)):
        raise DataError("Binary risk needs labels in {-1, +1}.")

    values = margins_batch(params, features).values
    return RiskReport(
        estimate=float(np.mean(loss.evaluate(labels, values))),
        method=EMPIRICAL,
        loss=loss,
        n=labels.size,
    )


def empirical_risk_multiclass(
    labeled, params: Sequence[ClassifierParams], loss
) -> RiskReport:
    """
    Supervised multiclass risk of K linear scorers over labeled samples.
    """
    loss = LossSpec(loss)
    if not loss.is_multiclass:
        raise ConfigError(f"{loss.name} is not a multiclass loss.")
    features, labels = labeled_arrays(labeled)
    margins = np.column_stack([margins_batch(p, features).values for p in params])
    return RiskReport(
        estimate=float(np.mean(loss.evaluate_multiclass(labels, margins))),
        method=EMPIRICAL,
        loss=loss,
        n=labels.size,
    )


def plugin_risk(fit: MixtureFit, loss) -> RiskReport:
    """
    Plug-in estimate sum_y p(y) E[L(y, A_y)], A_y ~ N(mu_y, sigma_y^2).
    """
    loss = LossSpec(loss)
    if loss.is_multiclass:
        raise ConfigError("Use plugin_risk_multiclass for multiclass losses.")
    if not fit.marginals.is_binary:
        raise ConfigError("plugin_risk needs a binary fit.")

    estimate = sum(
        p * conditional_expected_loss(loss, y, fit.mean(y), fit.std(y))
        for y, p in fit.marginals.items()
    )
    return RiskReport(estimate=estimate, method=PLUGIN, loss=loss, n=fit.n, fit=fit)


def plugin_risk_multiclass(fits: Sequence[MixtureFit], loss) -> RiskReport:
    """
    Plug-in estimate of a multiclass loss from one fit per classifier.

    Both multiclass losses are sums of one-dimensional terms over k != y, so
    only the class-conditional marginals f_{theta^k}(X) | Y=y, read from fit
    k, are needed.
    """
    loss = LossSpec(loss)
    if not loss.is_multiclass:
        raise ConfigError(f"{loss.name} is not a multiclass loss.")
    marginals = fits[0].marginals
    if len(fits) != len(marginals) or any(f.marginals != marginals for f in fits):
        raise ConfigError("Multiclass fits must share marginals, one fit per class.")

    term, sign = loss.binary_term()
    estimate = 0.0
    for y, p in marginals.items():
        inner = sum(
            conditional_expected_loss(term, sign, fit.mean(y), fit.std(y))
            for k, fit in zip(marginals.classes, fits)
            if k != y
        )
        estimate += p * inner
    return RiskReport(
        estimate=estimate, method=PLUGIN, loss=loss, n=fits[0].n, fit=list(fits)
    )


def labeled_arrays(labeled):
    if hasattr(labeled, "features") and hasattr(labeled, "labels"):
        features, labels = labeled.features, labeled.labels
        if labels is None:
            raise DataError("Empirical risk needs labeled data.")
        return features, np.asarray(labels, dtype=int)

    samples = list(labeled)
    if not samples:
        raise DataError("Empirical risk needs at least one sample.")
    for i, sample in enumerate(samples):
        if not sample.is_labeled:
            raise DataError(f"Sample {i} is unlabeled.")
        if sample.dim != samples[0].dim:
            raise DataError(f"Sample {i} has dimension {sample.dim}, expected {samples[0].dim}.")
    features = np.vstack([s.features for s in samples])
    labels = np.array([s.label for s in samples], dtype=int)
    return features, labels
