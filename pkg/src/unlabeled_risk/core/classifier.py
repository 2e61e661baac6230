from typing import Optional, Sequence, Union

import numpy as np

from unlabeled_risk.core.errors import ConfigError, DataError, NumericalError


class ClassifierParams:
    """
    Weight vector of a linear classifier without intercept.

    The margin function is f(X) = sum_j weights[j] * X[j]. A bias term can be
    emulated by appending a constant-1 feature to the data.
    """

    def __init__(self, weights):
        """
        Parameters
        ----------
        weights : array-like of float
            The d feature weights, d >= 1, all finite.
        """
        weights = np.array(weights, dtype=float).ravel()
        self._validate_weights(weights)
        weights.setflags(write=False)
        self._weights = weights

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    @property
    def dim(self) -> int:
        """
        Number of features d.
        """
        return self._weights.size

    def scaled(self, factor: float) -> "ClassifierParams":
        return ClassifierParams(self._weights * factor)

    @staticmethod
    def _validate_weights(weights: np.ndarray) -> None:
        if weights.size < 1:
            raise ConfigError("Classifier weights must have dimension d >= 1.")
        if not np.all(np.isfinite(weights)):
            raise ConfigError("Classifier weights must all be finite.")

    def __eq__(self, other):
        if not isinstance(other, ClassifierParams):
            return NotImplemented
        return np.array_equal(self._weights, other._weights)

    def __repr__(self):
        return f"ClassifierParams(dim={self.dim})"


class Sample:
    """
    A single observation: feature vector and optional class label.
    """

    def __init__(self, features, label: Optional[int] = None):
        features = np.array(features, dtype=float).ravel()
        if not np.all(np.isfinite(features)):
            raise DataError("Sample features must all be finite.")
        features.setflags(write=False)
        self._features = features
        self._label = None if label is None else int(label)

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def label(self) -> Optional[int]:
        return self._label

    @property
    def dim(self) -> int:
        return self._features.size

    @property
    def is_labeled(self) -> bool:
        return self._label is not None


class MarginValues:
    """
    Margins f_theta(X^(i)) of a classifier over a dataset, all finite.
    """

    def __init__(self, values):
        values = np.array(values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise NumericalError(f"Margin at index {bad} is not finite.")
        values.setflags(write=False)
        self._values = values

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self):
        return self._values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values
        return self._values.astype(dtype)


def as_margin_array(values: Union[MarginValues, Sequence[float], np.ndarray]) -> np.ndarray:
    """
    Return margins as a 1-D float array, accepting MarginValues or array-likes.
    """
    if isinstance(values, MarginValues):
        return values.values
    return MarginValues(values).values


def margin(params: ClassifierParams, sample: Sample) -> float:
    """
    Margin function f_theta(x) = <theta, x> of a single sample.

    Raises
    ------
    DataError
        If the sample dimension does not match the classifier.
    NumericalError
        If the dot product overflows.
    """
    if sample.dim != params.dim:
        raise DataError(
            f"Sample has dimension {sample.dim}, classifier expects {params.dim}."
        )
    value = float(np.dot(params.weights, sample.features))
    if not np.isfinite(value):
        raise NumericalError("Margin is not finite.")
    return value


def margins_batch(
    params: ClassifierParams, samples: Union[Sequence[Sample], np.ndarray]
) -> MarginValues:
    """
    Margins of every sample, in order.

    ``samples`` may be a sequence of Sample objects or an (n, d) feature
    matrix; the matrix path computes all dot products in one product.
    """
    if isinstance(samples, np.ndarray):
        return _margins_from_matrix(params, samples)

    values = np.empty(len(samples))
    for i, sample in enumerate(samples):
        try:
            values[i] = margin(params, sample)
        except (DataError, NumericalError) as exc:
            raise type(exc)(f"Sample {i}: {exc}") from exc
    return MarginValues(values)


def _margins_from_matrix(params: ClassifierParams, features: np.ndarray) -> MarginValues:
    features = np.atleast_2d(features)
    if features.shape[0] == 0:
        return MarginValues(np.empty(0))
    if features.shape[1] != params.dim:
        raise DataError(
            f"Sample 0: features have dimension {features.shape[1]}, "
            f"classifier expects {params.dim}."
        )
    with np.errstate(over="ignore", invalid="ignore"):
        values = features @ params.weights
    finite = np.isfinite(values)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise NumericalError(f"Sample {bad}: margin is not finite.")
    return MarginValues(values)
