from typing import Mapping

import numpy as np

from unlabeled_risk.core.errors import ConfigError, IdentifiabilityError
from unlabeled_risk.utils.constants import PRIOR_SUM_TOLERANCE

BINARY_CLASSES = (1, -1)


class LabelMarginals:
    """
    Known class prior p(Y).

    Classes are kept in a fixed order: (1, -1) for binary problems and
    ascending ids 1..K for multiclass ones. Every array-valued quantity in the
    package (means, stds, weights) follows this order.
    """

    def __init__(self, priors: Mapping[int, float]):
        """
        Parameters
        ----------
        priors : mapping of int to float
            Probability of each class id. Either the binary ids {1, -1} or
            the multiclass ids {1, ..., K}.
        """
        classes = self._ordered_classes(priors)
        probs = np.array([float(priors[c]) for c in classes])
        self._validate_probabilities(probs)

        self._classes = classes
        self._probs = probs
        self._probs.setflags(write=False)

    @classmethod
    def binary(cls, p_positive: float) -> "LabelMarginals":
        """
        Binary marginals from p(Y=1).
        """
        return cls({1: p_positive, -1: 1.0 - p_positive})

    @classmethod
    def multiclass(cls, probabilities) -> "LabelMarginals":
        """
        Multiclass marginals from the sequence (p(Y=1), ..., p(Y=K)).
        """
        return cls({k + 1: p for k, p in enumerate(probabilities)})

    @property
    def classes(self) -> tuple:
        return self._classes

    @property
    def probabilities(self) -> np.ndarray:
        return self._probs

    @property
    def is_binary(self) -> bool:
        return self._classes == BINARY_CLASSES

    def __len__(self):
        return len(self._classes)

    def __getitem__(self, label: int) -> float:
        return float(self._probs[self.index(label)])

    def index(self, label: int) -> int:
        try:
            return self._classes.index(label)
        except ValueError:
            raise ConfigError(f"Unknown class id {label}.") from None

    def items(self):
        return zip(self._classes, self._probs.tolist())

    def is_identifiable(self) -> bool:
        """
        True when all priors are pairwise distinct.
        """
        return np.unique(self._probs).size == self._probs.size

    def require_identifiable(self) -> None:
        """
        Raise IdentifiabilityError unless all priors are pairwise distinct.
        """
        if not self.is_identifiable():
            raise IdentifiabilityError(
                "Label marginals must be pairwise distinct to identify the mixture "
                f"components (p(Y=1) != p(Y=-1) for binary problems); got {dict(self.items())}."
            )

    def as_dict(self) -> dict:
        return {str(c): p for c, p in self.items()}

    @staticmethod
    def _ordered_classes(priors: Mapping[int, float]) -> tuple:
        labels = set(int(c) for c in priors)
        if labels == set(BINARY_CLASSES):
            return BINARY_CLASSES
        if labels == set(range(1, len(labels) + 1)) and len(labels) >= 2:
            return tuple(range(1, len(labels) + 1))
        if len(labels) == 1:
            return tuple(labels)
        raise ConfigError(
            f"Class ids must be {{1, -1}} or {{1, ..., K}}; got {sorted(labels)}."
        )

    @staticmethod
    def _validate_probabilities(probs: np.ndarray) -> None:
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise ConfigError("Label marginals must be strictly positive.")
        if abs(probs.sum() - 1.0) > PRIOR_SUM_TOLERANCE:
            raise ConfigError(f"Label marginals must sum to 1; got {probs.sum()!r}.")

    def __eq__(self, other):
        if not isinstance(other, LabelMarginals):
            return NotImplemented
        return self._classes == other._classes and np.array_equal(self._probs, other._probs)

    def __repr__(self):
        return f"LabelMarginals({dict(self.items())})"
