"""
Fisher information of the binary fixed-weight Gaussian mixture.

Parameters are ordered (mu_1, mu_-1, sigma_1^2, sigma_-1^2). With
u_i = (z - mu_i) / sigma_i and N_i the density of component i, the scores are

    d log p / d mu_i      = p_i * (u_i / sigma_i) * N_i / p
    d log p / d sigma_i^2 = p_i * (u_i^2 - 1) / (2 sigma_i^2) * N_i / p

and every entry of E[s s^T] is a combination of the ratio integrals

    M_{m,n}(i, j) = int u_i^m u_j^n N_i N_j / p dz.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.special import logsumexp

from unlabeled_risk.core.classifier import as_margin_array
from unlabeled_risk.core.errors import ConfigError, NumericalError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.mixture_fit import MixtureFit
from unlabeled_risk.utils.constants import (
    FISHER_PSD_TOLERANCE,
    FISHER_SYMMETRY_TOLERANCE,
    MOMENT_CONVERGENCE_LIMIT,
    MOMENT_HALF_WIDTH,
    MOMENT_SIMPSON_TOLERANCE,
)
from unlabeled_risk.utils.quadrature import refined_simpson

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("mu_1", "mu_-1", "sigma2_1", "sigma2_-1")


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    """
    4x4 information matrix indexed by (mu_1, mu_-1, sigma_1^2, sigma_-1^2),
    evaluated at ``eta``.
    """

    entries: np.ndarray
    marginals: LabelMarginals
    eta: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (4, 4) or not np.all(np.isfinite(entries)):
            raise NumericalError("Fisher information must be a finite 4x4 matrix.")

        scale = max(np.max(np.abs(entries)), np.finfo(float).tiny)
        if np.max(np.abs(entries - entries.T)) > FISHER_SYMMETRY_TOLERANCE * scale:
            raise NumericalError("Fisher information is not symmetric (internal consistency).")

        eigenvalues = np.linalg.eigvalsh(0.5 * (entries + entries.T))
        if eigenvalues[0] < -FISHER_PSD_TOLERANCE * max(eigenvalues[-1], 0.0):
            raise NumericalError(
                "Fisher information is not positive semidefinite (internal consistency)."
            )
        object.__setattr__(self, "entries", entries)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))


def moment_integral(m: int, n: int, i: int, j: int, eta: MixtureFit) -> float:
    """
    M_{m,n}(i, j) = int ((z-mu_i)/sigma_i)^m ((z-mu_j)/sigma_j)^n N_i N_j / p dz.

    Integrated by refined composite Simpson over mu +/- 12 sigma.

    Raises
    ------
    NumericalError
        If successive refinements still differ by more than 1e-6 relative.
    """
    if m < 0 or n < 0:
        raise ConfigError("Moment orders must be non-negative.")
    _require_positive_stds(eta)
    a, b = _integration_range(eta)
    log_weights = np.log(eta.weights)
    ki, kj = eta.marginals.index(i), eta.marginals.index(j)

    def integrand(z):
        log_components = eta.component_logpdf(z)
        log_mixture = logsumexp(log_components + log_weights, axis=1)
        ratio = np.exp(log_components[:, ki] + log_components[:, kj] - log_mixture)
        u_i = (z - eta.means[ki]) / eta.stds[ki]
        u_j = (z - eta.means[kj]) / eta.stds[kj]
        return u_i**m * u_j**n * ratio

    value, change = refined_simpson(integrand, a, b, MOMENT_SIMPSON_TOLERANCE)
    if change > MOMENT_CONVERGENCE_LIMIT:
        raise NumericalError(
            f"M_{{{m},{n}}}({i},{j}) did not converge (relative change {change:.3g})."
        )
    return value


def fisher_information(eta: MixtureFit) -> FisherMatrix:
    """
    Assemble the 4x4 Fisher information from the M_{m,n} integrals.
    """
    if not eta.marginals.is_binary:
        raise ConfigError("The Fisher information is implemented for binary mixtures.")
    _require_positive_stds(eta)

    moments: Dict[Tuple[int, int, int, int], float] = {}

    def M(m, n, i, j):
        key = (m, n, i, j)
        if key not in moments:
            moments[key] = moment_integral(m, n, i, j, eta)
        return moments[key]

    parameters = [("mu", 1), ("mu", -1), ("var", 1), ("var", -1)]
    entries = np.empty((4, 4))
    for a, (kind_a, i) in enumerate(parameters):
        for b, (kind_b, j) in enumerate(parameters):
            entries[a, b] = _entry(kind_a, i, kind_b, j, eta, M)

    return FisherMatrix(entries=entries, marginals=eta.marginals, eta=eta.eta)


def _entry(kind_a, i, kind_b, j, eta, M):
    p_i, p_j = eta.marginals[i], eta.marginals[j]
    s_i, s_j = eta.std(i), eta.std(j)

    if kind_a == "mu" and kind_b == "mu":
        return p_i * p_j / (s_i * s_j) * M(1, 1, i, j)
    if kind_a == "mu" and kind_b == "var":
        return p_i * p_j / (2 * s_i * s_j**2) * (M(1, 2, i, j) - M(1, 0, i, j))
    if kind_a == "var" and kind_b == "mu":
        return p_i * p_j / (2 * s_i**2 * s_j) * (M(2, 1, i, j) - M(0, 1, i, j))
    return (
        p_i
        * p_j
        / (4 * s_i**2 * s_j**2)
        * (M(2, 2, i, j) - M(2, 0, i, j) - M(0, 2, i, j) + M(0, 0, i, j))
    )


def score_vectors(values, eta: MixtureFit) -> np.ndarray:
    """
    Score of each margin with respect to (mu_1, mu_-1, sigma_1^2, sigma_-1^2),
    shape (n, 4).
    """
    if not eta.marginals.is_binary:
        raise ConfigError("Scores are implemented for binary mixtures.")
    z = as_margin_array(values)
    log_components = eta.component_logpdf(z)
    log_joint = log_components + np.log(eta.weights)
    posterior = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))

    u = (z[:, None] - eta.means) / eta.stds
    d_mu = posterior * u / eta.stds
    d_var = posterior * (u**2 - 1.0) / (2.0 * eta.variances)
    return np.hstack([d_mu, d_var])


def empirical_fisher_information(values, eta: MixtureFit) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean outer product of the scores over the margins and its standard error
    per entry.
    """
    scores = score_vectors(values, eta)
    products = scores[:, :, None] * scores[:, None, :]
    mean = products.mean(axis=0)
    stderr = products.std(axis=0, ddof=1) / np.sqrt(scores.shape[0])
    return mean, stderr


def _require_positive_stds(eta: MixtureFit) -> None:
    if np.any(eta.stds <= 0):
        raise ConfigError("The Fisher information requires sigma > 0 for every class.")


def _integration_range(eta: MixtureFit) -> Tuple[float, float]:
    spread = MOMENT_HALF_WIDTH * float(np.max(eta.stds))
    return float(np.min(eta.means)) - spread, float(np.max(eta.means)) + spread
