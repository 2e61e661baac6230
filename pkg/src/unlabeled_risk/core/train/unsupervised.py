"""
Training linear classifiers without labels by minimizing the plug-in risk
estimate R_hat_n(theta).

Every evaluation of R_hat_n computes the margins of theta on the training
features, fits the fixed-weight mixture to them and integrates the loss
under the fitted class-conditional Gaussians.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from unlabeled_risk.core.classifier import ClassifierParams, margins_batch
from unlabeled_risk.core.data.dataset import Dataset
from unlabeled_risk.core.errors import ConfigError, DegenerateDataError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.em import (
    fit_fixed_weight_mixture,
    fit_warm_started_mixtures,
    posterior_responsibilities,
    refit_with_responsibilities,
)
from unlabeled_risk.core.mixture.mixture_fit import FitConfig, MixtureFit
from unlabeled_risk.core.risk.estimator import RiskReport, empirical_risk, plugin_risk
from unlabeled_risk.core.risk.losses import LossSpec
from unlabeled_risk.core.train.supervised import error_rate
from unlabeled_risk.core.train.trace import (
    CONVERGED,
    MAX_ITERATIONS,
    STALLED,
    TraceRecord,
    TrainTrace,
)
from unlabeled_risk.utils.constants import (
    DEFAULT_FD_MIN_STEP,
    DEFAULT_FD_RELATIVE_STEP,
    DEFAULT_GRID_MAX_SWEEPS,
    DEFAULT_GRID_POINTS,
    DEFAULT_GRID_SHRINK,
    DEFAULT_GRID_WINDOW,
    DEFAULT_STEP_SIZE,
    DEFAULT_TRAIN_MAX_ITERATIONS,
    DEFAULT_TRAIN_TOLERANCE,
    DEGENERATE_PERTURBATION_SCALE,
    DEGENERATE_RETRIES,
    INIT_HIGH,
    INIT_LOW,
    LITERAL_WINDOW_FACTOR,
    MIN_GRID_WINDOW,
    STALL_PATIENCE,
)

logger = logging.getLogger(__name__)


class RefitMode(Enum):
    """
    How the mixture is obtained at a perturbed theta.

    WARM_START refits starting from the fit at the current theta, COLD refits
    from scratch and FROZEN runs a single M-step with the responsibilities of
    the current fit held fixed.
    """

    WARM_START = "warm-start"
    COLD = "cold"
    FROZEN = "frozen"


class WindowMode(Enum):
    FREE = "free"
    LITERAL = "literal"


@dataclass(frozen=True)
class GradDescentConfig:
    """
    Settings of unsupervised gradient descent.

    The finite-difference step of coordinate i is
    max(fd_min_step, fd_relative_step * |theta_i|). A step size of 0 is
    accepted and leaves theta unchanged.
    """

    step_size: float = DEFAULT_STEP_SIZE
    fd_relative_step: float = DEFAULT_FD_RELATIVE_STEP
    fd_min_step: float = DEFAULT_FD_MIN_STEP
    max_iterations: int = DEFAULT_TRAIN_MAX_ITERATIONS
    tolerance: float = DEFAULT_TRAIN_TOLERANCE
    seed: int = 0
    refit: RefitMode = RefitMode.WARM_START
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        object.__setattr__(self, "refit", _parse_refit(self.refit))
        if not self.step_size >= 0:
            raise ConfigError("step_size must be >= 0.")
        if not (self.fd_relative_step > 0 and self.fd_min_step > 0):
            raise ConfigError("Finite-difference steps must be > 0.")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1.")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be >= 0.")

    def fd_step(self, value: float) -> float:
        return max(self.fd_min_step, self.fd_relative_step * abs(value))


@dataclass(frozen=True)
class GridSearchConfig:
    """
    Settings of unsupervised coordinate-wise grid search.

    Each coordinate is searched over ``grid_points`` equally spaced values
    spanning [theta_i - w, theta_i + w]. With ``window_mode`` "literal" the
    half-width is 4 * grid_points instead of ``window``.
    """

    grid_points: int = DEFAULT_GRID_POINTS
    window: float = DEFAULT_GRID_WINDOW
    shrink: float = DEFAULT_GRID_SHRINK
    max_sweeps: int = DEFAULT_GRID_MAX_SWEEPS
    seed: int = 0
    window_mode: WindowMode = WindowMode.FREE
    refit: RefitMode = RefitMode.WARM_START
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        object.__setattr__(self, "refit", _parse_refit(self.refit))
        try:
            object.__setattr__(self, "window_mode", WindowMode(self.window_mode))
        except ValueError:
            raise ConfigError(f"Unknown window mode '{self.window_mode}'.") from None
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise ConfigError("grid_points must be odd and >= 3.")
        if not self.window > 0:
            raise ConfigError("window must be > 0.")
        if not 0 < self.shrink < 1:
            raise ConfigError("shrink must lie strictly between 0 and 1.")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1.")

    @property
    def initial_window(self) -> float:
        if self.window_mode is WindowMode.LITERAL:
            return float(LITERAL_WINDOW_FACTOR * self.grid_points)
        return float(self.window)


class EvaluationHook:
    """
    Supervised metrics of the current iterate on a held-out labeled set.
    """

    def __init__(self, labeled, loss):
        self._labeled = labeled
        self._loss = LossSpec(loss)

    def __call__(self, params: ClassifierParams) -> Tuple[float, float]:
        risk = empirical_risk(self._labeled, params, self._loss).estimate
        return risk, error_rate(params, self._labeled)

    def metrics(self, params: ClassifierParams) -> Dict[str, float]:
        risk_sup, rate = self(params)
        return {"risk_sup": risk_sup, "error_rate": rate}


class SplitEvaluationHook(EvaluationHook):
    """
    Metrics of a train/test split of labeled data: R_n on the training
    labels, and on the test split the error rate, R_n and R_hat_n from the
    test features alone.
    """

    def __init__(self, train: Dataset, test: Dataset, marginals: LabelMarginals, loss, fit_config=None):
        super().__init__(test, loss)
        self._train = train
        self._marginals = marginals
        self._fit_config = fit_config

    def metrics(self, params: ClassifierParams) -> Dict[str, float]:
        try:
            risk_unsup_test = unsupervised_risk_at(
                params, self._labeled, self._marginals, self._loss, self._fit_config
            )[0].estimate
        except DegenerateDataError:
            risk_unsup_test = float("nan")
        return {
            "risk_sup": empirical_risk(self._train, params, self._loss).estimate,
            "error_rate": error_rate(params, self._labeled),
            "risk_unsup_test": risk_unsup_test,
            "risk_sup_test": empirical_risk(self._labeled, params, self._loss).estimate,
        }


def unsupervised_risk_at(
    theta: ClassifierParams,
    samples,
    marginals: LabelMarginals,
    loss,
    fit_config: Optional[FitConfig] = None,
    initial: Optional[MixtureFit] = None,
) -> Tuple[RiskReport, MixtureFit]:
    """
    R_hat_n(theta): margins, fixed-weight mixture fit, plug-in risk.

    Raises
    ------
    DegenerateDataError
        When the margins are all identical, e.g. at theta = 0.
    """
    values = margins_batch(theta, _feature_matrix(samples))
    fit = fit_fixed_weight_mixture(values, marginals, fit_config, initial=initial)
    return plugin_risk(fit, loss), fit


class BaseTrainer:
    """
    BaseTrainer holds what both unsupervised algorithms share: the training
    margins, risk evaluation under the chosen refit mode, degenerate-point
    recovery and the trace.
    """

    # Also start perturbed refits from the quantile split of their margins.
    split_start = False

    def __init__(
        self,
        samples,
        marginals: LabelMarginals,
        loss,
        refit: RefitMode,
        fit_config: FitConfig,
        seed: int,
        eval_hook: Optional[Callable] = None,
        threads: int = 1,
    ):
        self._features = _feature_matrix(samples)
        marginals.require_identifiable()
        if not marginals.is_binary:
            raise ConfigError("Unsupervised training is implemented for binary classifiers.")
        self._marginals = marginals
        self._loss = LossSpec(loss)
        if self._loss.is_multiclass:
            raise ConfigError("Unsupervised training takes a binary loss.")
        self._refit = refit
        self._fit_config = fit_config
        self._rng = np.random.default_rng(seed)
        self._eval_hook = eval_hook
        self._threads = max(1, int(threads))
        self.trace = TrainTrace()

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    def initial_theta(self, theta0=None) -> np.ndarray:
        if theta0 is None:
            return self._rng.uniform(INIT_LOW, INIT_HIGH, size=self.dim)
        weights = np.array(
            theta0.weights if isinstance(theta0, ClassifierParams) else theta0, dtype=float
        ).ravel()
        if weights.size != self.dim:
            raise ConfigError(f"theta0 has dimension {weights.size}, data has {self.dim}.")
        return weights

    def fit_at(
        self, theta: np.ndarray, previous: Optional[MixtureFit] = None
    ) -> Tuple[np.ndarray, float, MixtureFit]:
        """
        Full fit at theta. A degenerate point is left by small random
        perturbations of theta, which is returned alongside the risk and fit.
        """
        for attempt in range(DEGENERATE_RETRIES + 1):
            try:
                report, fit = unsupervised_risk_at(
                    ClassifierParams(theta),
                    self._features,
                    self._marginals,
                    self._loss,
                    self._fit_config,
                    initial=previous,
                )
                return theta, report.estimate, fit
            except DegenerateDataError as exc:
                if attempt == DEGENERATE_RETRIES:
                    raise
                logger.warning("Degenerate fit at theta (%s); perturbing theta", exc)
                theta = theta + self._rng.normal(0.0, DEGENERATE_PERTURBATION_SCALE, theta.size)
        raise AssertionError("unreachable")

    def perturbed_risks(
        self, thetas: Sequence[np.ndarray], current: np.ndarray, center: MixtureFit
    ) -> np.ndarray:
        """
        R_hat_n at each theta under the refit mode, relative to the fit
        ``center`` at the current iterate. Degenerate points give NaN.

        Warm-started refits of all thetas run as one batched fit.
        """
        if self._refit is RefitMode.WARM_START:
            rows = np.asarray(thetas, dtype=float) @ self._features.T
            fits = fit_warm_started_mixtures(
                rows, self._marginals, center, self._fit_config, split_start=self.split_start
            )
            return np.array(
                [np.nan if fit is None else plugin_risk(fit, self._loss).estimate for fit in fits]
            )

        responsibilities = None
        if self._refit is RefitMode.FROZEN:
            current = margins_batch(ClassifierParams(current), self._features)
            responsibilities = posterior_responsibilities(current, center)

        def evaluate(theta):
            try:
                if self._refit is RefitMode.FROZEN:
                    values = margins_batch(ClassifierParams(theta), self._features)
                    fit = refit_with_responsibilities(
                        values, center, responsibilities, self._fit_config
                    )
                    return plugin_risk(fit, self._loss).estimate
                report, _ = unsupervised_risk_at(
                    ClassifierParams(theta), self._features, self._marginals, self._loss, self._fit_config
                )
                return report.estimate
            except DegenerateDataError:
                return np.nan

        with ThreadPoolExecutor(max_workers=self._threads) as pool:
            return np.array(list(pool.map(evaluate, thetas)), dtype=float)

    def record(self, iteration: int, theta: np.ndarray, risk: float) -> None:
        metrics = {}
        if isinstance(self._eval_hook, EvaluationHook):
            metrics = self._eval_hook.metrics(ClassifierParams(theta))
        elif self._eval_hook is not None:
            risk_sup, rate = self._eval_hook(ClassifierParams(theta))
            metrics = {"risk_sup": risk_sup, "error_rate": rate}
        self.trace.append(TraceRecord(iteration, risk, **metrics))
        logger.info("iteration %d: R_hat_n=%.10g", iteration, risk)

    def train(self, theta0=None) -> Tuple[ClassifierParams, TrainTrace]:
        raise NotImplementedError("Subclasses must implement train().")


class GradientDescentTrainer(BaseTrainer):
    """
    theta <- theta - alpha * grad, with the gradient of R_hat_n taken by
    central differences and every perturbed risk refit per ``config.refit``.
    """

    def __init__(self, samples, marginals, loss, config: GradDescentConfig, eval_hook=None, threads=1):
        super().__init__(
            samples,
            marginals,
            loss,
            config.refit,
            config.fit_config,
            config.seed,
            eval_hook,
            threads,
        )
        self._config = config

    def gradient(self, theta: np.ndarray, center: MixtureFit) -> np.ndarray:
        steps = np.array([self._config.fd_step(value) for value in theta])
        thetas = []
        for i, h in enumerate(steps):
            upper, lower = theta.copy(), theta.copy()
            upper[i] += h
            lower[i] -= h
            thetas.extend([upper, lower])

        risks = self.perturbed_risks(thetas, theta, center).reshape(-1, 2)
        gradient = (risks[:, 0] - risks[:, 1]) / (2 * steps)
        skipped = ~np.isfinite(gradient)
        if np.any(skipped):
            logger.warning(
                "Degenerate perturbed fit; coordinates %s skipped this iteration",
                np.flatnonzero(skipped).tolist(),
            )
            gradient[skipped] = 0.0
        return gradient

    def train(self, theta0=None) -> Tuple[ClassifierParams, TrainTrace]:
        config = self._config
        theta, risk, fit = self.fit_at(self.initial_theta(theta0))
        self.record(0, theta, risk)

        non_decreasing = 0
        self.trace.status = MAX_ITERATIONS
        for iteration in range(1, config.max_iterations + 1):
            new_theta = theta - config.step_size * self.gradient(theta, fit)
            if np.array_equal(new_theta, theta):
                self.trace.status = STALLED
                break

            new_theta, new_risk, fit = self.fit_at(new_theta, previous=fit)
            self.record(iteration, new_theta, new_risk)
            improvement = risk - new_risk
            theta, risk = new_theta, new_risk

            if improvement <= 0:
                non_decreasing += 1
                if non_decreasing >= STALL_PATIENCE:
                    self.trace.status = STALLED
                    break
                continue
            non_decreasing = 0
            if improvement <= config.tolerance * abs(risk):
                self.trace.status = CONVERGED
                break

        logger.info("Gradient descent finished (%s) at R_hat_n=%.10g", self.trace.status, risk)
        return ClassifierParams(theta), self.trace


class GridSearchTrainer(BaseTrainer):
    """
    Coordinate descent over a shrinking grid of candidate values.
    """

    # Grid candidates can sit far from the current fit.
    split_start = True

    def __init__(self, samples, marginals, loss, config: GridSearchConfig, eval_hook=None, threads=1):
        super().__init__(
            samples,
            marginals,
            loss,
            config.refit,
            config.fit_config,
            config.seed,
            eval_hook,
            threads,
        )
        self._config = config

    def best_candidate(self, theta: np.ndarray, i: int, window: float, risk: float, fit: MixtureFit):
        """
        Best grid value for coordinate i and whether it differs from the
        current one. Ties go to the value closest to the current one, then to
        the smaller value.
        """
        g = self._config.grid_points
        offsets = np.linspace(-window, window, g)
        offsets[g // 2] = 0.0
        values = theta[i] + offsets
        values[g // 2] = theta[i]

        others = [k for k in range(g) if k != g // 2]
        thetas = []
        for k in others:
            candidate = theta.copy()
            candidate[i] = values[k]
            thetas.append(candidate)

        risks = np.empty(g)
        risks[g // 2] = risk
        risks[others] = self.perturbed_risks(thetas, theta, fit)
        risks = np.where(np.isfinite(risks), risks, np.inf)

        best = np.lexsort((values, np.abs(offsets), risks))[0]
        return values[best], best != g // 2

    def train(self, theta0=None) -> Tuple[ClassifierParams, TrainTrace]:
        config = self._config
        theta, risk, fit = self.fit_at(self.initial_theta(theta0))
        self.record(0, theta, risk)

        window = config.initial_window
        self.trace.status = MAX_ITERATIONS
        for sweep in range(1, config.max_sweeps + 1):
            if window < MIN_GRID_WINDOW:
                self.trace.status = CONVERGED
                break
            changed = False
            for i in range(self.dim):
                value, moved = self.best_candidate(theta, i, window, risk, fit)
                if moved:
                    candidate = theta.copy()
                    candidate[i] = value
                    theta, risk, fit = self.fit_at(candidate, previous=fit)
                    changed = True
            self.record(sweep, theta, risk)
            if not changed:
                window *= config.shrink
                logger.debug("Sweep %d left theta unchanged; window now %g", sweep, window)
        else:
            if window < MIN_GRID_WINDOW:
                self.trace.status = CONVERGED

        logger.info("Grid search finished (%s) at R_hat_n=%.10g", self.trace.status, risk)
        return ClassifierParams(theta), self.trace


def train_gradient_descent(
    samples,
    marginals: LabelMarginals,
    loss,
    config: Optional[GradDescentConfig] = None,
    theta0=None,
    eval_hook: Optional[Callable] = None,
    threads: int = 1,
) -> Tuple[ClassifierParams, TrainTrace]:
    """
    Unsupervised gradient descent on R_hat_n.

    Each iteration fits 2d perturbed mixtures, batched together. The initial
    theta is drawn Uniform(-2, 2) per coordinate from ``config.seed`` unless
    ``theta0`` is given. Stops when the relative improvement falls below the tolerance
    (status "converged"), after 10 consecutive non-decreasing iterations or a
    zero update (status "stalled"), or at ``max_iterations``.
    """
    config = config or GradDescentConfig()
    trainer = GradientDescentTrainer(samples, marginals, loss, config, eval_hook, threads)
    return trainer.train(theta0)


def train_grid_search(
    samples,
    marginals: LabelMarginals,
    loss,
    config: Optional[GridSearchConfig] = None,
    eval_hook: Optional[Callable] = None,
    theta0=None,
    threads: int = 1,
) -> Tuple[ClassifierParams, TrainTrace]:
    """
    Unsupervised coordinate-wise grid search on R_hat_n.

    After a sweep that changes no coordinate the window shrinks by
    ``config.shrink``; training stops once the window is below 1e-3
    (status "converged") or after ``max_sweeps`` sweeps.
    """
    config = config or GridSearchConfig()
    trainer = GridSearchTrainer(samples, marginals, loss, config, eval_hook, threads)
    return trainer.train(theta0)


def _parse_refit(refit) -> RefitMode:
    try:
        return RefitMode(refit)
    except ValueError:
        names = ", ".join(m.value for m in RefitMode)
        raise ConfigError(f"Unknown refit mode '{refit}'. Expected one of: {names}.") from None


def _feature_matrix(samples) -> np.ndarray:
    if isinstance(samples, Dataset):
        return samples.features
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples.astype(float))
    samples = list(samples)
    return np.vstack([s.features for s in samples])
