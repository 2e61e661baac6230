import logging
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from unlabeled_risk.core.classifier import Sample
from unlabeled_risk.core.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


class Dataset:
    """
    A homogeneous collection of samples stored as an (n, d) feature matrix
    and an optional label vector.
    """

    def __init__(self, features, labels=None, provenance: str = ""):
        """
        Parameters
        ----------
        features : array-like, shape (n, d)
            Finite feature values.
        labels : array-like of int, shape (n,), optional
            Class ids; None for unlabeled data.
        provenance : str
            Free text describing where the data came from.
        """
        features = np.array(features, dtype=float)
        if features.ndim != 2:
            raise DataError("Features must form an (n, d) matrix.")
        self._validate_features(features)
        features.setflags(write=False)
        self._features = features

        if labels is not None:
            labels = np.array(labels).ravel()
            if labels.size != features.shape[0]:
                raise DataError(
                    f"Got {labels.size} labels for {features.shape[0]} samples."
                )
            labels = labels.astype(int)
            labels.setflags(write=False)
        self._labels = labels
        self.provenance = provenance

    @classmethod
    def from_samples(cls, samples, provenance: str = "") -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("A dataset needs at least one sample.")
        dim = samples[0].dim
        for i, sample in enumerate(samples):
            if sample.dim != dim:
                raise DataError(f"Sample {i} has dimension {sample.dim}, expected {dim}.")
        labeled = [s.is_labeled for s in samples]
        if any(labeled) and not all(labeled):
            first = labeled.index(not labeled[0])
            raise DataError(f"Sample {first} breaks the labeled/unlabeled consistency.")
        labels = [s.label for s in samples] if labeled[0] else None
        return cls(np.vstack([s.features for s in samples]), labels, provenance)

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def labels(self) -> Optional[np.ndarray]:
        return self._labels

    @property
    def n(self) -> int:
        return self._features.shape[0]

    @property
    def d(self) -> int:
        return self._features.shape[1]

    @property
    def labeled(self) -> bool:
        return self._labels is not None

    def subset(self, indices) -> "Dataset":
        labels = None if self._labels is None else self._labels[indices]
        return Dataset(self._features[indices], labels, self.provenance)

    def without_labels(self) -> "Dataset":
        return Dataset(self._features, None, self.provenance)

    def split(self, fraction: float, seed: int = 0) -> Tuple["Dataset", "Dataset"]:
        """
        Random split into a first part holding ``fraction`` of the samples and
        the remainder.
        """
        if not 0 < fraction < 1:
            raise ConfigError("Split fraction must lie strictly between 0 and 1.")
        order = np.random.default_rng(seed).permutation(self.n)
        cut = int(round(fraction * self.n))
        if cut == 0 or cut == self.n:
            raise DataError(f"Cannot split {self.n} samples with fraction {fraction}.")
        return self.subset(np.sort(order[:cut])), self.subset(np.sort(order[cut:]))

    def positive_fraction(self) -> float:
        if not self.labeled:
            raise DataError("Dataset is unlabeled.")
        return float(np.mean(self._labels == 1))

    @staticmethod
    def _validate_features(features: np.ndarray) -> None:
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise DataError("A dataset needs at least one sample and one feature.")
        finite = np.isfinite(features)
        if not np.all(finite):
            row = int(np.flatnonzero(~finite.all(axis=1))[0])
            raise DataError(f"Sample {row} has non-finite features.")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self._labels is None and other._labels is None) or (
            self._labels is not None
            and other._labels is not None
            and np.array_equal(self._labels, other._labels)
        )
        return same_labels and np.array_equal(self._features, other._features)

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, labeled={self.labeled})"


def standardize(dataset: Dataset) -> Tuple[Dataset, pd.DataFrame]:
    """
    Shift every feature to zero mean and scale it to unit population variance.

    Constant features are centered and left with std 1.

    Returns
    -------
    tuple
        The standardized dataset and a table with columns ``mean``, ``std``
        and ``constant``, one row per feature.
    """
    if dataset.n < 2:
        raise DataError("Standardization needs at least two samples.")
    features = dataset.features
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    constant = std == 0
    if np.any(constant):
        logger.warning(
            "%d constant feature(s) centered without scaling: %s",
            int(constant.sum()),
            np.flatnonzero(constant).tolist(),
        )
    std = np.where(constant, 1.0, std)

    table = pd.DataFrame({"mean": mean, "std": std, "constant": constant})
    table.index.name = "feature"
    scaled = Dataset((features - mean) / std, dataset.labels, dataset.provenance)
    return scaled, table
