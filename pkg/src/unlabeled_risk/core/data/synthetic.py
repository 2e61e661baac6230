import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from unlabeled_risk.core.classifier import ClassifierParams
from unlabeled_risk.core.data.dataset import Dataset
from unlabeled_risk.core.errors import ConfigError
from unlabeled_risk.utils.constants import (
    CALIBRATION_BRACKET,
    CALIBRATION_ITERATIONS,
    CALIBRATION_SAMPLES,
    CALIBRATION_SEED_OFFSET,
    CALIBRATION_TOLERANCE,
)

logger = logging.getLogger(__name__)

UNIFORM_SHIFT = "uniform-shift"
GAUSSIAN_SHIFT = "gaussian-shift"
FAMILIES = (UNIFORM_SHIFT, GAUSSIAN_SHIFT)

_CHUNK_ROWS = 10_000


@dataclass(frozen=True)
class SynthConfig:
    """
    Generative knobs of the planted synthetic problem.

    Class -1 features are independent Uniform(-1/2, 1/2) (or N(0, 1)) per
    dimension; class +1 features are the same shifted by delta, where delta is
    calibrated so that theta_ref = (1, ..., 1)/sqrt(d) reaches
    ``target_accuracy``. With ``centered`` every feature is shifted by -delta/2
    so that theta_ref's class-conditional margins straddle zero.
    """

    d: int
    n: int
    p_positive: float
    target_accuracy: float
    family: str = UNIFORM_SHIFT
    seed: int = 0
    centered: bool = False

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ConfigError("Synthetic data needs d >= 1 and n >= 1.")
        if not 0 < self.p_positive < 1:
            raise ConfigError("p(Y=1) must lie strictly between 0 and 1.")
        if not 0.5 < self.target_accuracy < 1:
            raise ConfigError("target_accuracy must lie strictly between 0.5 and 1.")
        if self.family not in FAMILIES:
            raise ConfigError(f"Unknown family '{self.family}'. Expected one of {FAMILIES}.")


def reference_classifier(d: int) -> ClassifierParams:
    return ClassifierParams(np.full(d, 1.0 / np.sqrt(d)))


def calibrate_shift(config: SynthConfig) -> Tuple[float, float]:
    """
    Bisect the per-dimension shift delta in [0, 4] so that theta_ref
    reaches the target accuracy on a dedicated calibration draw.

    Accuracy is measured with the threshold at the midpoint of the two
    class-conditional margin means. The same draw is reused for every delta,
    which keeps the accuracy monotone in delta.

    Returns
    -------
    tuple of float
        The shift delta and the accuracy it reaches on the calibration draw.
    """
    rng = np.random.default_rng([config.seed, CALIBRATION_SEED_OFFSET])
    positive = rng.random(CALIBRATION_SAMPLES) < config.p_positive
    noise = _reference_noise(config, CALIBRATION_SAMPLES, rng)
    sqrt_d = np.sqrt(config.d)

    def accuracy(delta: float) -> float:
        half_gap = 0.5 * delta * sqrt_d
        correct = np.where(positive, noise > -half_gap, noise < half_gap)
        return float(np.mean(correct))

    low, high = CALIBRATION_BRACKET
    if accuracy(high) < config.target_accuracy:
        raise ConfigError(
            f"Accuracy {config.target_accuracy} is unattainable with a shift in "
            f"{CALIBRATION_BRACKET} (d={config.d}, family={config.family})."
        )
    for _ in range(CALIBRATION_ITERATIONS):
        middle = 0.5 * (low + high)
        if accuracy(middle) < config.target_accuracy:
            low = middle
        else:
            high = middle

    reached = accuracy(high)
    if abs(reached - config.target_accuracy) > CALIBRATION_TOLERANCE:
        logger.warning(
            "Calibrated accuracy %.4f misses target %.4f", reached, config.target_accuracy
        )
    logger.info("Calibrated shift delta=%.6g (accuracy %.4f)", high, reached)
    return high, reached


def generate_synthetic(config: SynthConfig, shift: Optional[float] = None) -> Tuple[Dataset, ClassifierParams]:
    """
    Draw a labeled dataset from the planted problem.

    ``shift`` is the per-dimension delta; it is calibrated from ``config``
    when omitted.

    Returns
    -------
    tuple
        The dataset and the reference classifier theta_ref.
    """
    delta = calibrate_shift(config)[0] if shift is None else float(shift)
    if not delta >= 0:
        raise ConfigError(f"The class shift must be >= 0, got {shift}.")
    rng = np.random.default_rng(config.seed)

    labels = np.where(rng.random(config.n) < config.p_positive, 1, -1)
    features = _base_features(config, config.n, rng)
    features += delta * (labels == 1)[:, None]
    if config.centered:
        features -= 0.5 * delta

    provenance = (
        f"synthetic {config.family} d={config.d} n={config.n} p1={config.p_positive} "
        f"target={config.target_accuracy} delta={delta!r} seed={config.seed}"
    )
    return Dataset(features, labels, provenance), reference_classifier(config.d)


def midpoint_accuracy(dataset: Dataset, theta: ClassifierParams) -> float:
    """
    Accuracy of theta with the threshold at the midpoint of the two
    class-conditional mean margins (labels required). NaN when one class
    is absent.
    """
    margins = dataset.features @ theta.weights
    positive = dataset.labels == 1
    if positive.all() or not positive.any():
        return float("nan")
    threshold = 0.5 * (margins[positive].mean() + margins[~positive].mean())
    return float(np.mean((margins > threshold) == positive))


def _base_features(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if config.family == UNIFORM_SHIFT:
        return rng.uniform(-0.5, 0.5, size=(n, config.d))
    return rng.standard_normal(size=(n, config.d))


def _reference_noise(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    theta_ref . B for n draws of the unshifted base features B, in chunks.
    """
    theta = reference_classifier(config.d).weights
    parts = []
    for start in range(0, n, _CHUNK_ROWS):
        rows = min(_CHUNK_ROWS, n - start)
        parts.append(_base_features(config, rows, rng) @ theta)
    return np.concatenate(parts)
