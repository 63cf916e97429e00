"""
Heat Kernel - q_t(x), its derivatives, n-fold products Q and their mixed partials.

Derivatives use probabilists' Hermite polynomials:
q_t^(k)(x) = (-1)^k t^(-k/2) He_k(x / sqrt(t)) q_t(x).

Mixed partials of Q are expanded symbolically into KernelTerm lists; finite
differences are only used by the tests as an oracle.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache, partial
from itertools import product
from typing import Optional

import numpy as np
from scipy import integrate

from malliavin_lab.services.gaussian_algebra import (
    MAX_DIVERGENCE_POINTS,
    GaussianPolynomial,
    TimeGrid,
    iterated_divergence,
)
from malliavin_lab.shared.ensemble import EnsembleEstimate, ensemble_estimates
from malliavin_lab.shared.errors import (
    CapExceededError,
    GridMismatchError,
    NonPositiveTimeError,
)

logger = logging.getLogger(__name__)

MAX_DERIVATIVE_ORDER = 10
MAX_PRODUCT_FACTORS = 8
LOG_UNDERFLOW = math.log(1e-280)


def hermite_he(k: int, z):
    """Probabilists' Hermite polynomial He_k(z), by the three-term recurrence."""
    z = np.asarray(z, dtype=float)
    previous, current = np.ones_like(z), z.copy()
    if k == 0:
        return previous
    for j in range(1, k):
        previous, current = current, z * current - j * previous
    return current


def _check_time(t) -> None:
    if np.any(np.asarray(t) <= 0):
        raise NonPositiveTimeError(f"heat kernel needs t > 0, got {t}")


def _check_order(k: int) -> None:
    if not 0 <= k <= MAX_DERIVATIVE_ORDER:
        raise CapExceededError(f"derivative order must be in 0..{MAX_DERIVATIVE_ORDER}, got {k}")


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def kernel_derivative(t, x, k: int = 0):
    """q_t^(k)(x); vectorized over t and x."""
    _check_time(t)
    _check_order(k)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    density = np.exp(-x * x / (2 * t)) / np.sqrt(2 * math.pi * t)
    return _scalar((-1) ** k * t ** (-k / 2) * hermite_he(k, x / np.sqrt(t)) * density)


def kernel_ratio(t, x, k: int):
    """q_t^(k)(x) / q_t(x), finite everywhere."""
    _check_time(t)
    _check_order(k)
    t = np.asarray(t, dtype=float)
    return _scalar((-1) ** k * t ** (-k / 2) * hermite_he(k, np.asarray(x, dtype=float) / np.sqrt(t)))


def log_kernel(t, x):
    _check_time(t)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return _scalar(-x * x / (2 * t) - 0.5 * np.log(2 * math.pi * t))


def derivative_tail_bound(t, x):
    """Right side of |q_t'(x)| <= (2 / sqrt(t e)) q_{2t}(x)."""
    return _scalar(2 / np.sqrt(np.asarray(t, dtype=float) * math.e) * kernel_derivative(2 * np.asarray(t), x, 0))


def heat_equation_residual(t: float, x: float, step: Optional[float] = None) -> float:
    """|2 dq/dt - q''| by a central time difference, scaled by q_t(x) / t."""
    step = step or 1e-4 * t
    time_derivative = (kernel_derivative(t + step, x) - kernel_derivative(t - step, x)) / (2 * step)
    scale = kernel_derivative(t, x) / t
    return abs(2 * time_derivative - kernel_derivative(t, x, 2)) / scale


def chapman_kolmogorov_residual(s1: float, s2: float, y: float) -> float:
    """|integral of q_{s1}(u) q_{s2-s1}(y-u) du - q_{s2}(y)| by adaptive quadrature."""
    value, _ = integrate.quad(
        lambda u: kernel_derivative(s1, u) * kernel_derivative(s2 - s1, y - u),
        -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12,
    )
    return abs(value - kernel_derivative(s2, y))


# =============================================================================
# Products and mixed partials
# =============================================================================

@dataclass(frozen=True)
class KernelTerm:
    """Signed product of kernel derivatives, one order per factor q_{s_i - s_{i-1}}."""

    orders: tuple[int, ...]
    sign: int

    @property
    def total_order(self) -> int:
        return sum(self.orders)


@lru_cache(maxsize=None)
def mixed_partial_terms(n: int) -> tuple[KernelTerm, ...]:
    """
    Expansion of the full mixed partial of Q in y_1, ..., y_n.

    Factor i depends on y_i - y_{i-1}: d/dy_i raises the order of factor i,
    or raises factor i+1 with a sign flip. d/dy_n only touches factor n.
    """
    if not 1 <= n <= MAX_PRODUCT_FACTORS:
        raise CapExceededError(f"product size must be in 1..{MAX_PRODUCT_FACTORS}, got {n}")
    totals: Counter = Counter()
    for shifts in product((0, 1), repeat=n - 1):
        orders = [0] * n
        sign = 1
        for i, shift in enumerate(shifts):
            orders[i + shift] += 1
            sign = -sign if shift else sign
        orders[n - 1] += 1
        totals[tuple(orders)] += sign
    return tuple(KernelTerm(orders, sign) for orders, sign in totals.items() if sign != 0)


def _increments(grid: TimeGrid, y) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(y, dtype=float)
    if points.shape[-1:] != (grid.n,):
        raise GridMismatchError(f"point has shape {points.shape}, grid has {grid.n} variables")
    gaps = np.array([float(g) for g in grid.gaps()])
    steps = np.diff(points, axis=-1, prepend=0.0)
    return gaps, steps


def log_product_Q(grid: TimeGrid, y):
    gaps, steps = _increments(grid, y)
    return _scalar(np.sum(log_kernel(gaps, steps), axis=-1))


def product_Q(grid: TimeGrid, y):
    """Joint density of (W_{s_1}, ..., W_{s_n}) at y."""
    return _scalar(np.exp(log_product_Q(grid, y)))


def mixed_partial_Q(grid: TimeGrid, y) -> tuple[float, tuple[KernelTerm, ...]]:
    """Full mixed partial of Q at y, with the term list that produced it."""
    terms = mixed_partial_terms(grid.n)
    gaps, steps = _increments(grid, y)
    total = 0.0
    for term in terms:
        value = term.sign * np.ones(steps.shape[:-1])
        for i, k in enumerate(term.orders):
            value = value * kernel_derivative(gaps[i], steps[..., i], k)
        total = total + value
    return _scalar(total), terms


def mixed_partial_ratio(grid: TimeGrid, y):
    """Mixed partial of Q divided by Q, computed from Hermite ratios alone."""
    gaps, steps = _increments(grid, y)
    total = 0.0
    for term in mixed_partial_terms(grid.n):
        value = term.sign * np.ones(steps.shape[:-1])
        for i, k in enumerate(term.orders):
            if k:
                value = value * kernel_ratio(gaps[i], steps[..., i], k)
        total = total + value
    return _scalar(total)


def representation_residual(grid: TimeGrid, y, divergence: Optional[GaussianPolynomial] = None) -> float:
    """
    |Q^{-1} d^n Q / dy_1...dy_n - (-1)^n Lambda(y)|.

    Args:
        grid: Time grid with n <= MAX_DIVERGENCE_POINTS
        y: Evaluation point
        divergence: Precomputed iterated divergence of the grid, if available

    Returns:
        Absolute residual
    """
    if grid.n > MAX_DIVERGENCE_POINTS:
        raise CapExceededError(f"representation check is capped at n <= {MAX_DIVERGENCE_POINTS}")
    if log_product_Q(grid, y) < LOG_UNDERFLOW:
        ratio = mixed_partial_ratio(grid, y)
    else:
        value, _ = mixed_partial_Q(grid, y)
        ratio = value / product_Q(grid, y)
    divergence = divergence or iterated_divergence(grid)
    return abs(ratio - (-1) ** grid.n * divergence.evaluate(y))


# =============================================================================
# Density normalization by importance sampling
# =============================================================================

def _normalization_kernel(gaps: tuple, rng: np.random.Generator, count: int) -> np.ndarray:
    gaps = np.asarray(gaps)
    steps = rng.standard_normal((count, gaps.size)) * np.sqrt(2 * gaps)
    log_weight = log_kernel(gaps, steps) - log_kernel(2 * gaps, steps)
    return np.exp(np.sum(log_weight, axis=-1))


def normalization_estimate(grid: TimeGrid, samples: int, seed: int,
                           substreams: Optional[int] = None, workers: Optional[int] = None) -> EnsembleEstimate:
    """Monte Carlo estimate of the integral of Q (proposal increments have doubled variance)."""
    gaps = tuple(float(g) for g in grid.gaps())
    kernel = partial(_normalization_kernel, gaps)
    return ensemble_estimates(kernel, samples, seed, substreams=substreams, workers=workers,
                              method="importance_sampling")["value"]
