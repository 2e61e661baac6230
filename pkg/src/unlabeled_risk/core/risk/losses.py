from enum import Enum
from typing import Tuple

import numpy as np

from unlabeled_risk.core.errors import ConfigError, NumericalError


class LossKind(Enum):
    EXP = "exp"
    LOG = "log"
    HINGE = "hinge"
    MULTICLASS_LOG = "multiclass-log"
    MULTICLASS_HINGE = "multiclass-hinge"


BINARY_KINDS = (LossKind.EXP, LossKind.LOG, LossKind.HINGE)
MULTICLASS_KINDS = (LossKind.MULTICLASS_LOG, LossKind.MULTICLASS_HINGE)


def softplus(x):
    """
    log(1 + e^x) without overflow: max(x, 0) + log1p(e^-|x|).
    """
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class LossSpec:
    """
    A margin-based loss.

    Binary kinds take (y, alpha) with y in {-1, +1}. Multiclass kinds take a
    label y in {1..K} and the margin vector (f_{theta^1}, ..., f_{theta^K}).
    """

    def __init__(self, kind):
        self._kind = self._parse_kind(kind)

    @property
    def kind(self) -> LossKind:
        return self._kind

    @property
    def name(self) -> str:
        return self._kind.value

    @property
    def is_multiclass(self) -> bool:
        return self._kind in MULTICLASS_KINDS

    def binary_term(self) -> Tuple["LossSpec", int]:
        """
        The one-dimensional term a multiclass loss sums over k != Y, written
        as a binary loss and label: log(1 + e^-f) is the log loss at y=+1 and
        (1 + f)_+ is the hinge loss at y=-1.
        """
        if self._kind is LossKind.MULTICLASS_LOG:
            return LossSpec(LossKind.LOG), 1
        if self._kind is LossKind.MULTICLASS_HINGE:
            return LossSpec(LossKind.HINGE), -1
        raise ConfigError(f"{self.name} is not a multiclass loss.")

    def evaluate(self, y, alpha):
        """
        Vectorized binary loss L(y, alpha).
        """
        signed = np.asarray(y, dtype=float) * np.asarray(alpha, dtype=float)
        if self._kind is LossKind.EXP:
            return np.exp(-signed)
        if self._kind is LossKind.LOG:
            return softplus(-signed)
        if self._kind is LossKind.HINGE:
            return np.maximum(0.0, 1.0 - signed)
        raise ConfigError(f"{self.name} is a multiclass loss; use evaluate_multiclass.")

    def evaluate_multiclass(self, y, margins):
        """
        Vectorized multiclass loss. ``margins`` has shape (..., K); ``y`` holds
        class ids in 1..K.
        """
        term, sign = self.binary_term()
        margins = np.asarray(margins, dtype=float)
        y = np.asarray(y, dtype=int)
        k = margins.shape[-1]
        if np.any((y < 1) | (y > k)):
            raise ConfigError(f"Labels must lie in 1..{k}.")
        per_class = term.evaluate(sign, margins)
        own = np.take_along_axis(per_class, (y - 1)[..., None], axis=-1)[..., 0]
        return per_class.sum(axis=-1) - own

    @staticmethod
    def _parse_kind(kind) -> LossKind:
        if isinstance(kind, LossSpec):
            return kind.kind
        if isinstance(kind, LossKind):
            return kind
        try:
            return LossKind(str(kind))
        except ValueError:
            names = ", ".join(k.value for k in LossKind)
            raise ConfigError(f"Unknown loss '{kind}'. Expected one of: {names}.") from None

    def __eq__(self, other):
        if not isinstance(other, LossSpec):
            return NotImplemented
        return self._kind is other._kind

    def __hash__(self):
        return hash(self._kind)

    def __repr__(self):
        return f"LossSpec({self.name!r})"


def loss_eval(loss, y: int, margin) -> float:
    """
    Loss of a single observation.

    Parameters
    ----------
    loss : LossSpec or str
    y : int
        -1/+1 for binary losses, 1..K for multiclass ones.
    margin : float or sequence of float
        alpha = f_theta(x), or the margin vector for multiclass losses.
    """
    loss = LossSpec(loss)
    margin = np.asarray(margin, dtype=float)
    if not np.all(np.isfinite(margin)):
        raise NumericalError("Loss evaluation requires finite margins.")

    if loss.is_multiclass:
        if margin.ndim != 1:
            raise ConfigError("Multiclass losses take a margin vector.")
        return float(loss.evaluate_multiclass(y, margin))
    if y not in (-1, 1):
        raise ConfigError(f"Binary losses take y in {{-1, +1}}, got {y}.")
    if margin.ndim != 0:
        raise ConfigError("Binary losses take a scalar margin.")
    return float(loss.evaluate(y, margin))
