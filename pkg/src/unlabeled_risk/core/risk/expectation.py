import logging
import math

import numpy as np
from scipy.special import ndtr

from unlabeled_risk.core.errors import ConfigError, NumericalError
from unlabeled_risk.core.risk.losses import LossKind, LossSpec, loss_eval
from unlabeled_risk.utils.constants import (
    GAUSS_HERMITE_NODES,
    LOG_LOSS_GH_AGREEMENT,
    LOG_LOSS_SIMPSON_HALF_WIDTH,
    LOG_LOSS_SIMPSON_TOLERANCE,
)
from unlabeled_risk.utils.quadrature import gauss_hermite_expectation, refined_simpson

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def conditional_expected_loss(loss, y: int, mu: float, sigma: float) -> float:
    """
    E[L(y, A)] for A ~ N(mu, sigma^2), a binary loss and class y.

    Exponential and hinge losses use closed forms; the log loss uses
    Gauss-Hermite quadrature, cross-checked at twice the nodes and replaced by
    refined Simpson integration when the two disagree. sigma = 0 is a point
    mass at mu.
    """
    loss = LossSpec(loss)
    if loss.is_multiclass:
        raise ConfigError("Conditional expectations are defined for binary losses.")
    if y not in (-1, 1):
        raise ConfigError(f"Binary losses take y in {{-1, +1}}, got {y}.")
    if not (math.isfinite(mu) and math.isfinite(sigma)):
        raise NumericalError("mu and sigma must be finite.")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}.")

    if sigma == 0:
        value = loss_eval(loss, y, mu)
    elif loss.kind is LossKind.EXP:
        value = _expected_exp_loss(y, mu, sigma)
    elif loss.kind is LossKind.HINGE:
        value = _expected_hinge_loss(y, mu, sigma)
    else:
        value = _expected_log_loss(y, mu, sigma)

    if not math.isfinite(value):
        raise NumericalError(
            f"Expected {loss.name} loss is not finite for y={y}, mu={mu}, sigma={sigma}."
        )
    return value


def _expected_exp_loss(y, mu, sigma):
    exponent = -y * mu + 0.5 * sigma**2
    return math.exp(exponent) if exponent < 709.0 else math.inf


def _expected_hinge_loss(y, mu, sigma):
    s = 1.0 - y * mu
    u = s / sigma
    return s * float(ndtr(u)) + sigma * _INV_SQRT_2PI * math.exp(-0.5 * u * u)


def _expected_log_loss(y, mu, sigma):
    def integrand(alpha):
        return LossSpec(LossKind.LOG).evaluate(y, alpha)

    coarse = gauss_hermite_expectation(integrand, mu, sigma, GAUSS_HERMITE_NODES)
    fine = gauss_hermite_expectation(integrand, mu, sigma, 2 * GAUSS_HERMITE_NODES)
    if abs(fine - coarse) <= LOG_LOSS_GH_AGREEMENT * abs(fine):
        return fine

    logger.debug("Gauss-Hermite disagreement at mu=%g sigma=%g; using Simpson", mu, sigma)

    def weighted(alpha):
        u = (alpha - mu) / sigma
        return integrand(alpha) * np.exp(-0.5 * u * u) * (_INV_SQRT_2PI / sigma)

    half_width = LOG_LOSS_SIMPSON_HALF_WIDTH * sigma
    value, change = refined_simpson(
        weighted, mu - half_width, mu + half_width, LOG_LOSS_SIMPSON_TOLERANCE
    )
    if change > LOG_LOSS_SIMPSON_TOLERANCE:
        logger.warning(
            "Simpson integration of the log loss stopped at relative change %.3g", change
        )
    return value
