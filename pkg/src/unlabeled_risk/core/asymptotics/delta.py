import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd

from unlabeled_risk.core.asymptotics.fisher import FisherMatrix, fisher_information
from unlabeled_risk.core.errors import NumericalError, SingularInformationError, UnlabeledRiskError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.mixture_fit import MixtureFit
from unlabeled_risk.core.risk.estimator import plugin_risk
from unlabeled_risk.core.risk.losses import LossSpec
from unlabeled_risk.utils.constants import DELTA_RELATIVE_STEP, FLOAT_FORMAT, MAX_CONDITION_NUMBER

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AsymptoticVariance:
    """
    Delta-method variance of sqrt(n) * (R_hat_n - R).

    ``parameter_cov`` is the inverse Fisher information and ``gradient`` the
    gradient of the plug-in risk with respect to
    (mu_1, mu_-1, sigma_1^2, sigma_-1^2).
    """

    parameter_cov: np.ndarray
    risk_variance: float
    gradient: np.ndarray
    fisher: FisherMatrix

    def std_error(self, n: int) -> float:
        """
        Asymptotic standard deviation of R_hat_n for n samples.
        """
        return float(np.sqrt(self.risk_variance / n))


@dataclass(frozen=True)
class GridPoint:
    x: float
    fit: MixtureFit


def risk_gradient(eta: MixtureFit, loss) -> np.ndarray:
    """
    Central-difference gradient of the plug-in risk h(eta), with a step of
    1e-5 relative to each coordinate.
    """
    loss = LossSpec(loss)
    center = eta.eta
    gradient = np.empty(center.size)
    for k, value in enumerate(center):
        step = DELTA_RELATIVE_STEP * (abs(value) if value != 0 else 1.0)
        upper, lower = center.copy(), center.copy()
        upper[k] += step
        lower[k] -= step
        gradient[k] = (
            plugin_risk(eta.with_eta(upper), loss).estimate
            - plugin_risk(eta.with_eta(lower), loss).estimate
        ) / (2 * step)
    return gradient


def delta_method_risk_variance(eta: MixtureFit, loss) -> AsymptoticVariance:
    """
    Asymptotic variance grad h^T I^{-1} grad h of the plug-in risk estimator.

    Raises
    ------
    SingularInformationError
        When the information matrix is singular or its condition number
        exceeds 1e12, i.e. the components are nearly non-identifiable.
    """
    fisher = fisher_information(eta)
    condition = np.linalg.cond(fisher.entries)
    if not np.isfinite(condition) or condition >= MAX_CONDITION_NUMBER:
        raise SingularInformationError(
            f"Fisher information is singular (condition number {condition:.3g}); "
            "the mixture components are nearly non-identifiable at this point."
        )

    covariance = np.linalg.inv(fisher.entries)
    covariance = 0.5 * (covariance + covariance.T)
    gradient = risk_gradient(eta, loss)
    risk_variance = float(gradient @ covariance @ gradient)
    if risk_variance < -1e-12:
        raise NumericalError(f"Negative risk variance {risk_variance:.3g}.")

    return AsymptoticVariance(
        parameter_cov=covariance,
        risk_variance=max(risk_variance, 0.0),
        gradient=gradient,
        fisher=fisher,
    )


def imbalance_grid(
    p_values: Iterable[float], means=(2.0, -1.0), stds=(1.0, 1.0)
) -> List[GridPoint]:
    """
    Grid over p(Y=1) with the class-conditional margin parameters fixed.
    """
    return [
        GridPoint(float(p), MixtureFit(LabelMarginals.binary(p), means=means, stds=stds))
        for p in p_values
    ]


def separation_grid(
    separations: Iterable[float], mu_negative=-1.0, stds=(1.0, 1.0), p_positive=0.7
) -> List[GridPoint]:
    """
    Grid over |mu_1 - mu_-1| with mu_-1, the stds and p(Y) fixed.
    """
    marginals = LabelMarginals.binary(p_positive)
    return [
        GridPoint(float(s), MixtureFit(marginals, means=(mu_negative + s, mu_negative), stds=stds))
        for s in separations
    ]


def variance_ratio_grid(
    ratios: Iterable[float], means=(2.0, -1.0), sigma_negative=1.0, p_positive=0.7
) -> List[GridPoint]:
    """
    Grid over sigma_1 / sigma_-1 with the means, sigma_-1 and p(Y) fixed.
    """
    marginals = LabelMarginals.binary(p_positive)
    return [
        GridPoint(
            float(r), MixtureFit(marginals, means=means, stds=(r * sigma_negative, sigma_negative))
        )
        for r in ratios
    ]


def accuracy_surface(grid: Sequence[GridPoint], loss, threads: int = 1) -> pd.DataFrame:
    """
    Asymptotic accuracy 1 / Var(sqrt(n) R_hat_n) at each grid point.

    Points whose variance cannot be computed are kept with a missing
    accuracy.

    Returns
    -------
    pd.DataFrame
        Columns ``x`` and ``accuracy``, one row per grid point, in grid order.
    """
    loss = LossSpec(loss)

    def evaluate(point: GridPoint) -> float:
        try:
            variance = delta_method_risk_variance(point.fit, loss).risk_variance
        except UnlabeledRiskError as exc:
            logger.warning("Accuracy at x=%g is missing: %s", point.x, exc)
            return np.nan
        return 1.0 / variance if variance > 0 else np.inf

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        accuracies = list(pool.map(evaluate, grid))

    return pd.DataFrame({"x": [p.x for p in grid], "accuracy": accuracies})


def write_accuracy_csv(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, columns=["x", "accuracy"], float_format=FLOAT_FORMAT, na_rep="")
