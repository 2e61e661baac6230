import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import kstest

from unlabeled_risk.core.classifier import as_margin_array
from unlabeled_risk.core.errors import ConfigError, DataError
from unlabeled_risk.core.mixture.mixture_fit import MixtureFit
from unlabeled_risk.utils.constants import FLOAT_FORMAT, MIN_HISTOGRAM_BINS, MIN_NORMALITY_SAMPLES

logger = logging.getLogger(__name__)

CONSERVATIVE_NOTE = (
    "Model parameters were fitted on the same values; KS p-values would be "
    "conservative and are not reported."
)


@dataclass(frozen=True, eq=False)
class NormalityReport:
    """
    Kolmogorov-Smirnov distance between the empirical distribution of the
    margins and the CDF of a fitted Gaussian model.
    """

    ks_statistic: float
    n: int
    fit: MixtureFit
    standardized: bool = False

    def __post_init__(self):
        if not 0 <= self.ks_statistic <= 1:
            raise ConfigError(f"KS statistic must lie in [0, 1], got {self.ks_statistic}.")

    @property
    def scaled_statistic(self) -> float:
        """
        sqrt(n) * D, the quantity with a Kolmogorov limit distribution.
        """
        return float(np.sqrt(self.n) * self.ks_statistic)

    def as_dict(self) -> dict:
        return {
            "ks_statistic": float(self.ks_statistic),
            "n": int(self.n),
            "scaled_statistic": self.scaled_statistic,
            "standardized": bool(self.standardized),
            "fit": self.fit.as_dict(),
            "note": CONSERVATIVE_NOTE,
        }


def normality_check(values, fit: MixtureFit, standardize: bool = False) -> NormalityReport:
    """
    sup_x |F_n(x) - F_model(x)| for the margins against the fit's mixture CDF.

    Parameters
    ----------
    values : MarginValues or array-like
        At least 20 margins.
    fit : MixtureFit
        Fixed-weight mixture or single-Gaussian fit.
    standardize : bool
        Subtract the empirical mean and divide by the empirical std, applying
        the same affine map to the fit.
    """
    z = as_margin_array(values)
    if z.size < MIN_NORMALITY_SAMPLES:
        raise DataError(
            f"A normality check needs at least {MIN_NORMALITY_SAMPLES} values, got {z.size}."
        )
    if standardize:
        z, fit = _standardize(z, fit)

    result = kstest(z, fit.cdf)
    return NormalityReport(
        ks_statistic=float(result.statistic), n=z.size, fit=fit, standardized=standardize
    )


def histogram_table(values, fit: MixtureFit, bins: int, standardize: bool = False) -> pd.DataFrame:
    """
    Density-normalized histogram of the margins next to the model pdf at the
    bin centers.

    Returns
    -------
    pd.DataFrame
        Columns ``bin_center``, ``empirical_density`` and ``model_density``.
    """
    if bins < MIN_HISTOGRAM_BINS:
        raise ConfigError(f"Histograms need at least {MIN_HISTOGRAM_BINS} bins, got {bins}.")
    z = as_margin_array(values)
    if z.size == 0:
        raise DataError("Cannot build a histogram of zero values.")
    if standardize:
        z, fit = _standardize(z, fit)

    density, edges = np.histogram(z, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return pd.DataFrame(
        {"bin_center": centers, "empirical_density": density, "model_density": fit.pdf(centers)}
    )


def histogram_export(values, fit: MixtureFit, bins: int, path, standardize: bool = False) -> str:
    """
    Write :func:`histogram_table` to ``path`` as CSV and return the path.
    """
    table = histogram_table(values, fit, bins, standardize)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise DataError(f"Cannot write {path}: directory does not exist.")
    try:
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc}") from exc
    logger.info("Histogram with %d bins written to %s", bins, path)
    return str(path)


def _standardize(z: np.ndarray, fit: MixtureFit):
    std = float(z.std())
    if std == 0:
        raise DataError("Cannot standardize constant values.")
    mean = float(z.mean())
    return (z - mean) / std, fit.affine(1.0 / std, -mean / std)
