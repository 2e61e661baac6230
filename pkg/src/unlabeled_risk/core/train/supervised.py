import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from unlabeled_risk.core.classifier import ClassifierParams, margins_batch
from unlabeled_risk.core.errors import ConfigError, DataError, NumericalError
from unlabeled_risk.core.risk.estimator import labeled_arrays
from unlabeled_risk.core.risk.losses import LossKind, LossSpec
from unlabeled_risk.utils.constants import (
    DEFAULT_SUPERVISED_MAX_ITERATIONS,
    DEFAULT_SUPERVISED_STEP,
    DEFAULT_SUPERVISED_TOLERANCE,
    MAX_STEP_HALVINGS,
    STALL_PATIENCE,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SupervisedConfig:
    """
    Gradient descent settings of the supervised baseline.
    """

    step_size: float = DEFAULT_SUPERVISED_STEP
    max_iterations: int = DEFAULT_SUPERVISED_MAX_ITERATIONS
    tolerance: float = DEFAULT_SUPERVISED_TOLERANCE

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0.")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1.")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0.")


def empirical_risk_value(features: np.ndarray, labels: np.ndarray, weights, loss) -> float:
    loss = LossSpec(loss)
    return float(np.mean(loss.evaluate(labels, features @ np.asarray(weights, dtype=float))))


def empirical_risk_gradient(features: np.ndarray, labels: np.ndarray, weights, loss) -> np.ndarray:
    """
    Gradient of the mean binary loss with respect to theta. The hinge loss
    uses the subgradient 0 at the kink.
    """
    loss = LossSpec(loss)
    signed = labels * (features @ np.asarray(weights, dtype=float))
    if loss.kind is LossKind.LOG:
        slope = -expit(-signed)
    elif loss.kind is LossKind.EXP:
        slope = -np.exp(-signed)
    elif loss.kind is LossKind.HINGE:
        slope = np.where(signed < 1.0, -1.0, 0.0)
    else:
        raise ConfigError(f"{loss.name} is not a binary loss.")
    return features.T @ (slope * labels) / labels.size


def train_supervised_baseline(
    labeled, loss, config: Optional[SupervisedConfig] = None, theta0=None
) -> ClassifierParams:
    """
    Minimize the supervised empirical risk by full-batch gradient descent.

    After 10 consecutive risk increases the step is halved and descent
    restarts from the best iterate so far.

    Raises
    ------
    NumericalError
        When the step has been halved 5 times without curing divergence.
    """
    config = config or SupervisedConfig()
    loss = LossSpec(loss)
    if loss.is_multiclass:
        raise ConfigError("The supervised baseline trains binary classifiers only.")
    features, labels = labeled_arrays(labeled)
    if np.any((labels != 1) & (labels != -1)):
        raise DataError("The supervised baseline needs labels in {-1, +1}.")

    theta = np.zeros(features.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    step = config.step_size
    risk = empirical_risk_value(features, labels, theta, loss)
    best_theta, best_risk = theta.copy(), risk
    increases = halvings = 0

    for iteration in range(1, config.max_iterations + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            candidate = theta - step * empirical_risk_gradient(features, labels, theta, loss)
            new_risk = empirical_risk_value(features, labels, candidate, loss)

        increases = increases + 1 if not new_risk <= risk else 0
        if increases >= STALL_PATIENCE or not np.isfinite(new_risk):
            halvings += 1
            if halvings > MAX_STEP_HALVINGS:
                raise NumericalError(
                    f"Supervised descent diverged after {MAX_STEP_HALVINGS} step halvings."
                )
            step *= 0.5
            logger.info("Supervised descent diverging; step halved to %g", step)
            theta, risk, increases = best_theta.copy(), best_risk, 0
            continue

        change = abs(risk - new_risk)
        theta, risk = candidate, new_risk
        if risk < best_risk:
            best_theta, best_risk = theta.copy(), risk
        if change <= config.tolerance * max(abs(risk), np.finfo(float).tiny):
            logger.debug("Supervised descent converged after %d iterations", iteration)
            break

    return ClassifierParams(best_theta)


def error_rate(params: ClassifierParams, labeled) -> float:
    """
    Fraction of samples with sign(f_theta(x)) != y, taking sign(0) = +1.
    """
    features, labels = labeled_arrays(labeled)
    margins = margins_batch(params, features).values
    predictions = np.where(margins >= 0, 1, -1)
    return float(np.mean(predictions != labels))
