"""
Maximum likelihood for one-dimensional Gaussian mixtures whose mixing weights
are fixed to the known label marginals.

Only the component means and variances are estimated. Because the weights are
known and pairwise distinct, the component with weight p(Y=k) *is* class k:
there is no relabeling step after the fit.

All starting points (and, for the trainers, all perturbed classifiers of one
iteration) are fitted together: every array carries a leading row axis and a
row stops iterating once it has converged. EM brings each row into the basin
of a maximum, then Newton steps on (mu, sigma^2) finish it to high accuracy.
"""

import logging
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from unlabeled_risk.core.classifier import as_margin_array
from unlabeled_risk.core.errors import ConfigError, DataError, DegenerateDataError, NumericalError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.mixture_fit import FitConfig, MixtureFit
from unlabeled_risk.utils.constants import (
    LOG_SQRT_2PI,
    MIN_FIT_SAMPLES,
    NEWTON_EIGEN_RATIO,
    NEWTON_MAX_STEP,
    POLISH_LOGLIK_SLACK,
    POLISH_MAX_STEPS,
    POLISH_TOLERANCE,
    RESTART_PERTURBATION_SCALE,
)

logger = logging.getLogger(__name__)


def loglikelihood(values, marginals: LabelMarginals, fit: MixtureFit) -> float:
    """
    Mixture loglikelihood sum_i log sum_y p(y) N(z_i; mu_y, sigma_y^2).

    The weights come from ``marginals``; uniform marginals are accepted here
    since evaluation does not need identifiability.
    """
    z = as_margin_array(values)
    if z.size == 0:
        raise DataError("Cannot evaluate a loglikelihood on empty margins.")
    if len(marginals) != len(fit.marginals):
        raise ConfigError("Marginals and fit have a different number of classes.")
    if np.any(fit.stds <= 0):
        raise ConfigError("Loglikelihood requires sigma > 0 for every class.")
    return float(np.sum(replace(fit, marginals=marginals).logpdf(z)))


def fit_fixed_weight_mixture(
    values,
    marginals: LabelMarginals,
    config: Optional[FitConfig] = None,
    initial: Optional[MixtureFit] = None,
    init_order: Optional[Sequence[int]] = None,
) -> MixtureFit:
    """
    Fit per-class means and variances by EM with the weights held at p(y).

    Parameters
    ----------
    values : MarginValues or array-like
        Margins to fit, at least four and not all identical.
    marginals : LabelMarginals
        Known priors; must be pairwise distinct.
    config : FitConfig, optional
        EM settings; defaults to FitConfig().
    initial : MixtureFit, optional
        Warm start. Run in addition to the ``config.restarts`` standard starts.
    init_order : sequence of int, optional
        Classes from the lowest to the highest block of the quantile-split
        initialization. Defaults to ascending class ids.

    Returns
    -------
    MixtureFit
        The start with the highest final loglikelihood (the earliest one on
        ties).
    """
    config = config or FitConfig()
    marginals.require_identifiable()
    z = as_margin_array(values)
    _validate_values(z)

    order = _resolve_order(marginals, init_order)
    starts = list(_starting_points(z, marginals, config, order, initial))
    means = np.array([m for m, _ in starts])[None]
    variances = np.array([v for _, v in starts])[None]
    return _best_fits(z[None], marginals, means, variances, config)[0]


def fit_warm_started_mixtures(
    rows,
    marginals: LabelMarginals,
    initial: MixtureFit,
    config: Optional[FitConfig] = None,
    split_start: bool = False,
) -> List[Optional[MixtureFit]]:
    """
    Fit one mixture per row of ``rows`` (shape (m, n)) in a single batch.

    Every row starts from ``initial``; with ``split_start`` the quantile split
    of the row is tried as well and the better start kept. Rows that are too
    short or constant cannot be fitted and come back as None.
    """
    config = config or FitConfig()
    marginals.require_identifiable()
    z = np.atleast_2d(np.asarray(rows, dtype=float))
    if not np.all(np.isfinite(z)):
        raise NumericalError("Margins must be finite.")
    fits: List[Optional[MixtureFit]] = [None] * z.shape[0]
    valid = np.flatnonzero(np.ptp(z, axis=1) > 0) if z.shape[1] >= MIN_FIT_SAMPLES else np.array([], dtype=int)
    if valid.size == 0:
        return fits

    order = tuple(sorted(marginals.classes))
    means = np.tile(np.asarray(initial.means, dtype=float), (valid.size, 1, 1))
    variances = np.tile(np.asarray(initial.variances, dtype=float), (valid.size, 1, 1))
    if split_start:
        splits = [_quantile_split(z[row], marginals, order) for row in valid]
        means = np.concatenate([means, np.array([m for m, _ in splits])[:, None]], axis=1)
        variances = np.concatenate([variances, np.array([v for _, v in splits])[:, None]], axis=1)

    for row, fit in zip(valid, _best_fits(z[valid], marginals, means, variances, config)):
        fits[row] = fit
    return fits


def fit_multiclass_mixtures(
    all_margins: Sequence, marginals: LabelMarginals, config: Optional[FitConfig] = None
) -> List[MixtureFit]:
    """
    Fit one K-component fixed-weight mixture per classifier of a multiclass
    model. Fit k estimates f_{theta^k}(X) | Y=k' for every class k'.
    """
    classes = marginals.classes
    if len(classes) < 2:
        raise ConfigError("Multiclass fits need K >= 2 classes.")
    marginals.require_identifiable()
    if len(all_margins) != len(classes):
        raise ConfigError(
            f"Expected {len(classes)} margin vectors (one per classifier), got {len(all_margins)}."
        )

    fits = []
    for label, values in zip(classes, all_margins):
        # Classifier k scores class k highest; start it on the top block.
        order = tuple(c for c in sorted(classes) if c != label) + (label,)
        fits.append(fit_fixed_weight_mixture(values, marginals, config, init_order=order))
    return fits


def fit_single_gaussian(values) -> MixtureFit:
    """
    Single-component fit (sample mean and population std).
    """
    z = as_margin_array(values)
    _validate_values(z)
    marginals = LabelMarginals({1: 1.0})
    fit = MixtureFit(marginals=marginals, means=[z.mean()], stds=[z.std()], n=z.size)
    loglik = float(np.sum(fit.logpdf(z)))
    return replace(fit, loglik=loglik, converged=True, history=(loglik,))


def posterior_responsibilities(values, fit: MixtureFit) -> np.ndarray:
    """
    Posterior class probabilities p(y | z_i) under the fit, shape (n, K).
    """
    z = as_margin_array(values)
    log_r = fit.component_logpdf(z) + np.log(fit.weights)
    return np.exp(log_r - logsumexp(log_r, axis=1, keepdims=True))


def refit_with_responsibilities(
    values, fit: MixtureFit, responsibilities: np.ndarray, config: Optional[FitConfig] = None
) -> MixtureFit:
    """
    Single M-step on new margins with responsibilities held fixed.
    """
    config = config or FitConfig()
    z = as_margin_array(values)
    floor = np.array([[config.variance_floor_factor * float(z.var())]])
    means, variances = _m_step(
        z[None], np.asarray(responsibilities)[None], fit.means[None], fit.variances[None], floor
    )
    return replace(
        fit,
        means=means[0],
        stds=np.sqrt(variances[0]),
        loglik=float("nan"),
        iterations=0,
        converged=False,
        history=(),
    )


def _validate_values(z: np.ndarray) -> None:
    if z.size < MIN_FIT_SAMPLES:
        raise DegenerateDataError(
            f"A mixture fit needs at least {MIN_FIT_SAMPLES} margins, got {z.size}."
        )
    if np.ptp(z) == 0:
        raise DegenerateDataError("All margins are identical; the mixture is degenerate.")


def _resolve_order(marginals: LabelMarginals, init_order) -> Tuple[int, ...]:
    if init_order is None:
        return tuple(sorted(marginals.classes))
    order = tuple(int(c) for c in init_order)
    if sorted(order) != sorted(marginals.classes):
        raise ConfigError(f"init_order {order} is not a permutation of {marginals.classes}.")
    return order


def _starting_points(z, marginals, config, order, initial):
    """
    Yield (means, variances) starting points in class order.

    The warm start comes first, then the quantile split, its mirror, and
    perturbations of the quantile split.
    """
    if initial is not None:
        yield np.array(initial.means, dtype=float), np.array(initial.variances, dtype=float)

    base_means, base_vars = _quantile_split(z, marginals, order)
    yield base_means, base_vars
    if config.restarts == 1:
        return

    yield _quantile_split(z, marginals, order[::-1])

    rng = np.random.default_rng(config.seed)
    scale = RESTART_PERTURBATION_SCALE * float(z.std())
    for _ in range(config.restarts - 2):
        yield base_means + rng.normal(0.0, scale, size=base_means.size), base_vars.copy()


def _quantile_split(z, marginals, order):
    """
    Sort the margins and cut them into consecutive blocks whose sizes match
    the priors of ``order``; block j initializes class order[j].
    """
    sorted_z = np.sort(z)
    n = sorted_z.size
    pooled_var = float(sorted_z.var())
    priors = np.array([marginals[c] for c in order])
    edges = np.rint(np.concatenate([[0.0], np.cumsum(priors)]) * n).astype(int)

    means = np.empty(len(order))
    variances = np.empty(len(order))
    for j, label in enumerate(order):
        block = sorted_z[edges[j] : edges[j + 1]]
        k = marginals.index(label)
        means[k] = block.mean() if block.size else sorted_z[min(edges[j], n - 1)]
        variances[k] = block.var() if block.size >= 2 else pooled_var
    return means, variances


def _best_fits(z, marginals, start_means, start_vars, config: FitConfig) -> List[MixtureFit]:
    """
    Run every start of every margin row and keep the best start per row.

    ``z`` has shape (m, n); the starts have shape (m, s, K).
    """
    m, s, k = start_means.shape
    n = z.shape[1]
    floor = np.repeat(config.variance_floor_factor * z.var(axis=1), s)[:, None]
    rows = np.repeat(z, s, axis=0)
    means = start_means.reshape(m * s, k).copy()
    variances = np.maximum(start_vars.reshape(m * s, k), floor)
    log_weights = np.log(marginals.probabilities)

    em_loglik, em_iterations, em_converged, em_history = _run_em(
        rows, log_weights, means, variances, floor, config
    )
    loglik, steps, polished, polish_history = _polish(rows, log_weights, means, variances, floor, em_loglik)

    ranked = np.where(np.isnan(loglik), -np.inf, loglik).reshape(m, s)
    best = ranked.argmax(axis=1) + s * np.arange(m)
    logger.debug(
        "EM batch of %d rows x %d starts: %d EM iterations, %d Newton steps at most",
        m, s, em_iterations.max(), steps.max(),
    )

    fits = []
    for row in best:
        history = np.concatenate(
            [em_history[: em_iterations[row] + 1, row], polish_history[: steps[row], row]]
        )
        fits.append(
            MixtureFit(
                marginals=marginals,
                means=means[row],
                stds=np.sqrt(variances[row]),
                loglik=float(loglik[row]),
                iterations=int(em_iterations[row] + steps[row]),
                converged=bool(em_converged[row] or polished[row]),
                n=n,
                history=tuple(history.tolist()),
            )
        )
    return fits


def _e_step(z, log_weights, means, variances):
    deviation = z[:, :, None] - means[:, None, :]
    log_r = (
        log_weights
        - 0.5 * deviation**2 / variances[:, None, :]
        - 0.5 * np.log(variances)[:, None, :]
        - LOG_SQRT_2PI
    )
    row_lse = logsumexp(log_r, axis=2)
    return np.exp(log_r - row_lse[:, :, None]), row_lse.sum(axis=1)


def _m_step(z, resp, means, variances, floor):
    counts = resp.sum(axis=1)
    alive = counts > np.finfo(float).eps * z.shape[1]

    safe = np.where(alive, counts, 1.0)
    new_means = np.where(alive, np.einsum("ank,an->ak", resp, z) / safe, means)
    spread = np.einsum("ank,ank->ak", resp, (z[:, :, None] - new_means[:, None, :]) ** 2) / safe
    new_vars = np.where(alive, spread, variances)
    return new_means, np.maximum(new_vars, floor)


def _run_em(z, log_weights, means, variances, floor, config: FitConfig):
    """
    EM on every row until its relative loglikelihood change drops below the
    tolerance. ``means`` and ``variances`` are updated in place.

    Returns the final loglikelihoods, iteration counts, convergence flags and
    the loglikelihood history with shape (iterations + 1, rows).
    """
    rows = z.shape[0]
    resp, loglik = _e_step(z, log_weights, means, variances)
    history = [loglik.copy()]
    iterations = np.zeros(rows, dtype=int)
    active = np.ones(rows, dtype=bool)

    for iteration in range(1, config.max_iterations + 1):
        idx = np.flatnonzero(active)
        new_means, new_vars = _m_step(z[idx], resp[idx], means[idx], variances[idx], floor[idx])
        new_resp, new_loglik = _e_step(z[idx], log_weights, new_means, new_vars)
        previous = loglik[idx]
        means[idx], variances[idx], resp[idx], loglik[idx] = new_means, new_vars, new_resp, new_loglik
        iterations[idx] = iteration
        history.append(loglik.copy())

        settled = np.abs(new_loglik - previous) <= config.loglik_rel_tolerance * np.abs(previous)
        active[idx[settled]] = False
        if not active.any():
            break

    return loglik, iterations, ~active, np.array(history)


def _polish(z, log_weights, means, variances, floor, loglik):
    """
    Newton steps on the loglikelihood in (mu, sigma^2), updated in place.

    A Newton step is taken only where the Hessian is negative definite, the
    step is small and the loglikelihood does not drop; otherwise the row
    takes an EM step. A row is done when no parameter moves by more than
    POLISH_TOLERANCE in units of its own scale.
    """
    rows, k = means.shape
    loglik = loglik.copy()
    steps = np.zeros(rows, dtype=int)
    active = np.ones(rows, dtype=bool)
    history = []

    for step in range(1, POLISH_MAX_STEPS + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        zs, mu, var, current = z[idx], means[idx], variances[idx], loglik[idx]
        resp, _ = _e_step(zs, log_weights, mu, var)
        scale = np.concatenate([np.sqrt(var), var], axis=1)
        gradient, hessian = _loglik_derivatives(zs, resp, mu, var)
        scaled = _newton_step(gradient * scale, hessian * scale[:, :, None] * scale[:, None, :])

        with np.errstate(invalid="ignore"):
            newton = np.all(np.abs(scaled) <= NEWTON_MAX_STEP, axis=1)
            candidate_mu = mu + scaled[:, :k] * scale[:, :k]
            candidate_var = var + scaled[:, k:] * scale[:, k:]
            newton &= np.all(candidate_var >= floor[idx], axis=1)

        em_mu, em_var = _m_step(zs, resp, mu, var, floor[idx])
        new_mu = np.where(newton[:, None], candidate_mu, em_mu)
        new_var = np.where(newton[:, None], candidate_var, em_var)
        _, new_loglik = _e_step(zs, log_weights, new_mu, new_var)

        dropped = newton & (new_loglik < current - POLISH_LOGLIK_SLACK * np.abs(current))
        if dropped.any():
            new_mu[dropped], new_var[dropped] = em_mu[dropped], em_var[dropped]
            _, new_loglik[dropped] = _e_step(zs[dropped], log_weights, em_mu[dropped], em_var[dropped])

        change = np.maximum(np.abs(new_mu - mu) / np.sqrt(var), np.abs(new_var - var) / var).max(axis=1)
        means[idx], variances[idx], loglik[idx] = new_mu, new_var, new_loglik
        steps[idx] = step
        history.append(loglik.copy())
        active[idx[change <= POLISH_TOLERANCE]] = False

    history = np.array(history) if history else np.empty((0, rows))
    return loglik, steps, ~active, history


def _loglik_derivatives(z, resp, means, variances):
    """
    Gradient and Hessian of the mixture loglikelihood with respect to
    (mu_1..mu_K, v_1..v_K), v = sigma^2, shapes (rows, 2K) and (rows, 2K, 2K).
    """
    k = means.shape[1]
    deviation = z[:, :, None] - means[:, None, :]
    v = variances[:, None, :]
    score_mu = deviation / v
    score_var = 0.5 * (deviation**2 / v - 1.0) / v
    scores = np.concatenate([resp * score_mu, resp * score_var], axis=2)
    gradient = scores.sum(axis=1)

    # Within-component second derivatives plus the responsibility covariance.
    h_mu_mu = (resp * (score_mu**2 - 1.0 / v)).sum(axis=1)
    h_mu_var = (resp * (score_mu * score_var - deviation / v**2)).sum(axis=1)
    h_var_var = (resp * (score_var**2 + 0.5 / v**2 - deviation**2 / v**3)).sum(axis=1)
    hessian = -np.einsum("anp,anq->apq", scores, scores)
    j = np.arange(k)
    hessian[:, j, j] += h_mu_mu
    hessian[:, j, k + j] += h_mu_var
    hessian[:, k + j, j] += h_mu_var
    hessian[:, k + j, k + j] += h_var_var
    return gradient, hessian


def _newton_step(gradient, hessian):
    """
    -H^{-1} g per row; NaN rows where H is not negative definite.
    """
    finite = np.all(np.isfinite(hessian), axis=(1, 2)) & np.all(np.isfinite(gradient), axis=1)
    hessian = np.where(finite[:, None, None], hessian, -np.eye(hessian.shape[1]))
    gradient = np.where(finite[:, None], gradient, 0.0)

    eigenvalues, vectors = np.linalg.eigh(hessian)
    bound = -NEWTON_EIGEN_RATIO * np.abs(eigenvalues).max(axis=1, keepdims=True)
    definite = finite & np.all(eigenvalues < bound, axis=1)
    safe = np.where(definite[:, None], eigenvalues, -1.0)
    coefficients = np.einsum("apq,ap->aq", vectors, gradient) / safe
    step = -np.einsum("apq,aq->ap", vectors, coefficients)
    step[~definite] = np.nan
    return step
