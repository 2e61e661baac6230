from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy.integrate import simpson

from unlabeled_risk.utils.constants import SIMPSON_MAX_INTERVALS, SIMPSON_MIN_INTERVALS


@lru_cache(maxsize=8)
def hermgauss_nodes(num_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Hermite nodes and weights normalized for expectations under N(0, 1)
    after the change of variables a = mu + sqrt(2) * sigma * t.
    """
    nodes, weights = np.polynomial.hermite.hermgauss(num_nodes)
    weights = weights / np.sqrt(np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite_expectation(
    func: Callable[[np.ndarray], np.ndarray], mu: float, sigma: float, num_nodes: int
) -> float:
    """
    E[func(A)] for A ~ N(mu, sigma^2) by Gauss-Hermite quadrature.
    """
    nodes, weights = hermgauss_nodes(num_nodes)
    return float(np.dot(weights, func(mu + np.sqrt(2.0) * sigma * nodes)))


def refined_simpson(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tolerance: float,
    min_intervals: int = SIMPSON_MIN_INTERVALS,
    max_intervals: int = SIMPSON_MAX_INTERVALS,
) -> Tuple[float, float]:
    """
    Composite Simpson rule on [a, b], doubling the number of intervals until
    the relative change between two levels drops below ``tolerance``.

    The change is measured against the integral of |func| so that integrals
    which cancel to zero still converge.

    Returns
    -------
    tuple of float
        The last estimate and the relative change that stopped the refinement
        (above ``tolerance`` only if ``max_intervals`` was reached).
    """
    intervals = min_intervals
    grid = np.linspace(a, b, intervals + 1)
    previous = simpson(func(grid), x=grid)
    change = np.inf

    while intervals < max_intervals:
        intervals *= 2
        grid = np.linspace(a, b, intervals + 1)
        values = func(grid)
        current = simpson(values, x=grid)
        magnitude = max(abs(current), simpson(np.abs(values), x=grid))
        if magnitude == 0.0:
            return 0.0, 0.0
        change = abs(current - previous) / magnitude
        previous = current
        if change < tolerance:
            break

    return float(previous), float(change)
