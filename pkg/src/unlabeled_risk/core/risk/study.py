import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from unlabeled_risk.core.classifier import margins_batch
from unlabeled_risk.core.data.synthetic import UNIFORM_SHIFT, SynthConfig, generate_synthetic
from unlabeled_risk.core.errors import UnlabeledRiskError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.em import fit_fixed_weight_mixture
from unlabeled_risk.core.mixture.mixture_fit import FitConfig
from unlabeled_risk.core.risk.estimator import empirical_risk, plugin_risk

logger = logging.getLogger(__name__)

STUDY_COLUMNS = [
    "loss",
    "n",
    "accuracy",
    "p_positive",
    "seed",
    "estimate",
    "empirical",
    "rel_err",
]


def accuracy_study(
    sizes: Sequence[int],
    accuracies: Sequence[float],
    priors: Sequence[float],
    losses: Sequence[str] = ("log", "hinge"),
    d: int = 100,
    seeds: Sequence[int] = tuple(range(20)),
    family: str = UNIFORM_SHIFT,
    fit_config: Optional[FitConfig] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """
    Relative error |R_hat_n - R_n| / R_n of the reference classifier on
    planted synthetic data over a grid of sample sizes, classifier accuracies
    and label marginals.

    One row per (loss, n, accuracy, p_positive, seed). Cells whose estimate
    fails are kept with missing values.
    """
    cells = list(product(sizes, accuracies, priors, seeds))

    def run(cell):
        n, accuracy, p_positive, seed = cell
        dataset, theta = generate_synthetic(
            SynthConfig(
                d=d,
                n=n,
                p_positive=p_positive,
                target_accuracy=accuracy,
                family=family,
                seed=seed,
            )
        )
        rows = []
        try:
            values = margins_batch(theta, dataset.features)
            fit = fit_fixed_weight_mixture(values, LabelMarginals.binary(p_positive), fit_config)
        except UnlabeledRiskError as exc:
            logger.warning("Study cell %s failed: %s", cell, exc)
            fit = None
        for loss in losses:
            empirical = empirical_risk(dataset, theta, loss).estimate
            estimate = plugin_risk(fit, loss).estimate if fit is not None else np.nan
            rel_err = abs(estimate - empirical) / empirical if empirical > 0 else np.nan
            rows.append((loss, n, accuracy, p_positive, seed, estimate, empirical, rel_err))
        return rows

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run, cells))

    table = pd.DataFrame([row for rows in results for row in rows], columns=STUDY_COLUMNS)
    table = table.sort_values(["loss", "accuracy", "p_positive", "n", "seed"], kind="stable")
    return table.reset_index(drop=True)


def summarize_study(table: pd.DataFrame) -> pd.DataFrame:
    """
    Median relative error over seeds per (loss, accuracy, p_positive, n).
    """
    return (
        table.groupby(["loss", "accuracy", "p_positive", "n"], as_index=False)["rel_err"]
        .median()
        .rename(columns={"rel_err": "median_rel_err"})
    )
