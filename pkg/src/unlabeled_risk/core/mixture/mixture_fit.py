from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy.special import logsumexp, ndtr

from unlabeled_risk.core.errors import ConfigError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.utils.constants import (
    DEFAULT_LOGLIK_REL_TOLERANCE,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_RESTARTS,
    DEFAULT_VARIANCE_FLOOR_FACTOR,
    LOG_SQRT_2PI,
)


@dataclass(frozen=True)
class FitConfig:
    """
    Settings of the fixed-weight EM fit.
    """

    max_iterations: int = DEFAULT_MAX_ITERATIONS
    loglik_rel_tolerance: float = DEFAULT_LOGLIK_REL_TOLERANCE
    restarts: int = DEFAULT_RESTARTS
    variance_floor_factor: float = DEFAULT_VARIANCE_FLOOR_FACTOR
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1.")
        if not self.loglik_rel_tolerance > 0:
            raise ConfigError("loglik_rel_tolerance must be > 0.")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1.")
        if not self.variance_floor_factor > 0:
            raise ConfigError("variance_floor_factor must be > 0.")


@dataclass(frozen=True, eq=False)
class MixtureFit:
    """
    Per-class Gaussian model of the margin distribution.

    ``means`` and ``stds`` follow the class order of ``marginals``; the
    component carrying weight p(Y=k) is class k. A zero std is a point mass
    (allowed for risk evaluation, not for likelihood evaluation).
    """

    marginals: LabelMarginals
    means: np.ndarray
    stds: np.ndarray
    loglik: float = float("nan")
    iterations: int = 0
    converged: bool = False
    n: int = 0
    history: Tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=float).ravel()
        stds = np.array(self.stds, dtype=float).ravel()
        k = len(self.marginals)
        if means.size != k or stds.size != k:
            raise ConfigError(f"Expected {k} means and stds, got {means.size} and {stds.size}.")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(stds))):
            raise ConfigError("Mixture parameters must be finite.")
        if np.any(stds < 0):
            raise ConfigError("Mixture standard deviations must be >= 0.")
        means.setflags(write=False)
        stds.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @classmethod
    def from_parameters(cls, marginals: LabelMarginals, means, stds, **kwargs) -> "MixtureFit":
        """
        Build a fit from explicit per-class parameters given as mappings
        class -> value or as sequences in class order.
        """
        if isinstance(means, dict):
            means = [means[c] for c in marginals.classes]
        if isinstance(stds, dict):
            stds = [stds[c] for c in marginals.classes]
        return cls(marginals=marginals, means=means, stds=stds, **kwargs)

    @property
    def classes(self) -> tuple:
        return self.marginals.classes

    @property
    def weights(self) -> np.ndarray:
        return self.marginals.probabilities

    @property
    def variances(self) -> np.ndarray:
        return self.stds**2

    def mean(self, label: int) -> float:
        return float(self.means[self.marginals.index(label)])

    def std(self, label: int) -> float:
        return float(self.stds[self.marginals.index(label)])

    @property
    def eta(self) -> np.ndarray:
        """
        Binary parameter vector (mu_1, mu_-1, sigma_1^2, sigma_-1^2).
        """
        if not self.marginals.is_binary:
            raise ConfigError("eta is defined for binary fits only.")
        return np.concatenate([self.means, self.variances])

    def with_eta(self, eta) -> "MixtureFit":
        """
        Copy with parameters replaced by the vector (mu_1, mu_-1, s_1^2, s_-1^2).
        """
        eta = np.asarray(eta, dtype=float)
        k = len(self.marginals)
        if eta.size != 2 * k:
            raise ConfigError(f"eta must have {2 * k} entries.")
        variances = eta[k:]
        if np.any(variances < 0):
            raise ConfigError("Variances in eta must be >= 0.")
        return replace(self, means=eta[:k], stds=np.sqrt(variances), history=())

    def affine(self, scale: float, shift: float = 0.0) -> "MixtureFit":
        """
        Fit of the transformed margins scale * z + shift.
        """
        return replace(
            self,
            means=self.means * scale + shift,
            stds=self.stds * abs(scale),
            loglik=float("nan"),
            history=(),
        )

    def component_logpdf(self, z) -> np.ndarray:
        """
        log N(z; mu_k, sigma_k^2) for every component, shape (n, K).
        """
        self._require_positive_stds()
        z = np.asarray(z, dtype=float).reshape(-1, 1)
        u = (z - self.means) / self.stds
        return -0.5 * u**2 - np.log(self.stds) - LOG_SQRT_2PI

    def logpdf(self, z) -> np.ndarray:
        """
        Log density of the mixture sum_k p(k) N(z; mu_k, sigma_k^2).
        """
        return logsumexp(self.component_logpdf(z) + np.log(self.weights), axis=1)

    def pdf(self, z) -> np.ndarray:
        return np.exp(self.logpdf(z))

    def cdf(self, z) -> np.ndarray:
        """
        Mixture CDF. Point-mass components contribute a unit step.
        """
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (flat - self.means) / self.stds
        steps = np.where(flat >= self.means, 1.0, 0.0)
        component = np.where(self.stds > 0, ndtr(u), steps)
        return (component @ self.weights).reshape(z.shape)

    def sample(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Draw n labeled margins from the mixture; returns (values, labels).
        """
        idx = rng.choice(len(self.marginals), size=n, p=self.weights)
        values = rng.normal(self.means[idx], self.stds[idx])
        labels = np.asarray(self.classes)[idx]
        return values, labels

    def _require_positive_stds(self) -> None:
        if np.any(self.stds <= 0):
            raise ConfigError("Density evaluation requires sigma > 0 for every class.")

    def as_dict(self) -> dict:
        return {
            "mu": {str(c): float(m) for c, m in zip(self.classes, self.means)},
            "sigma": {str(c): float(s) for c, s in zip(self.classes, self.stds)},
            "loglik": float(self.loglik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }
