"""
Simplex Integrals - Wallis integrals, ball volumes, eta_n(t), and I_n(t) estimators.

I_n(t) is the ordered-simplex integral of E[b'(W_{s_1}) ... b'(W_{s_n})]. It is
estimated either by a Gauss-Legendre simplex rule with a Gauss-Hermite inner
expectation (n <= 3), or from Brownian paths through
n! I_n(t) = E[(integral of b'(W_s) ds)^n].
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from malliavin_lab.services.drift_registry import DriftSpec, drift_functions
from malliavin_lab.services.gaussian_algebra import TimeGrid, iterated_divergence
from malliavin_lab.services.heat_kernel import kernel_ratio
from malliavin_lab.shared.ensemble import (
    EnsembleEstimate,
    EstimateWithError,
    ensemble_estimates,
)
from malliavin_lab.shared.errors import (
    CapExceededError,
    DerivativeUnavailableError,
    InvalidParameterError,
)

logger = logging.getLogger(__name__)

ETA_GRID_POINTS = 4000
MAX_ETA_QUADRATURE = 12
HERMITE_NODES = 40
TERM_HERMITE_NODES = 16
TIME_NODES = {1: 40, 2: 20, 3: 12}
MAX_QUADRATURE_N = 3
MAX_TERM_FACTORS = 4
MAX_DAVIE_N = 6
TREND_LIMIT = 0.05


# =============================================================================
# Wallis integrals and ball volumes
# =============================================================================

def wallis(k: int) -> float:
    """W(k) = integral of sin^k over [0, pi/2], by W(k) = (k-1)/k W(k-2)."""
    if k < 0:
        raise InvalidParameterError(f"Wallis index must be >= 0, got {k}")
    value = math.pi / 2 if k % 2 == 0 else 1.0
    for j in range(2 + k % 2, k + 1, 2):
        value *= (j - 1) / j
    return value


def ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n as 2^n W(1) ... W(n)."""
    if n < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {n}")
    return 2.0 ** n * math.prod(wallis(k) for k in range(1, n + 1))


def ball_volume_closed(n: int) -> float:
    """pi^q / q! for n = 2q, 2^(2q+1) pi^q q! / (2q+1)! for n = 2q+1."""
    q = n // 2
    if n % 2 == 0:
        return math.pi ** q / math.factorial(q)
    return 2.0 ** n * math.pi ** q * math.factorial(q) / math.factorial(n)


def a_alpha(alpha: float) -> float:
    """A(alpha) = integral of (1-tau)^alpha tau^(-1/2) over (0, 1)."""
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    order = 2 * alpha + 1
    if abs(order - round(order)) < 1e-12:
        return 2 * wallis(int(round(order)))
    value, _ = integrate.quad(lambda theta: 2 * math.cos(theta) ** order, 0.0, math.pi / 2, epsabs=1e-14)
    return value


# =============================================================================
# eta_n(t)
# =============================================================================

@lru_cache(maxsize=2)
def _pair_radii(points: int) -> tuple[np.ndarray, np.ndarray]:
    """sqrt(m^2 - i^2) for all 0 <= i <= m < points, flattened by m, plus segment starts."""
    lengths = np.arange(points) + 1
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    m = np.repeat(np.arange(points, dtype=float), lengths)
    i = np.arange(m.size, dtype=float) - np.repeat(starts, lengths)
    return np.sqrt(m * m - i * i), starts


def eta_quadrature_profile(n_max: int, t: float, points: int = ETA_GRID_POINTS) -> list[float]:
    """
    eta_1(t), ..., eta_{n_max}(t) by the convolution recursion.

    eta_k(tau) = integral over (0, tau) of r^(-1/2) eta_{k-1}(tau - r) dr; with r = u^2 this
    is 2 * integral over (0, sqrt(tau)) of eta_{k-1}(tau - u^2) du, taken by the trapezoid
    rule on a uniform u-grid. eta_{k-1} is held as a profile in v = sqrt(tau).
    """
    if n_max > MAX_ETA_QUADRATURE:
        raise CapExceededError(f"eta quadrature is capped at n <= {MAX_ETA_QUADRATURE}, got {n_max}")
    radii, starts = _pair_radii(points)
    ends = starts + np.arange(points)
    spacing = math.sqrt(t) / (points - 1)
    v = np.arange(points) * spacing
    profile = np.ones(points)
    values = []
    for _ in range(n_max):
        samples = np.interp(radii * spacing, v, profile)
        sums = np.add.reduceat(samples, starts) - 0.5 * (samples[starts] + samples[ends])
        profile = 2 * spacing * sums
        values.append(float(profile[-1]))
    return values


def eta(n: int, t: float, method: str = "closed") -> EstimateWithError:
    """eta_n(t) = v_n t^(n/2), either closed or by quadrature."""
    if n < 1 or t <= 0:
        raise InvalidParameterError(f"need n >= 1 and t > 0, got n={n}, t={t}")
    if method == "closed":
        return EstimateWithError(value=ball_volume(n) * t ** (n / 2), method="closed")
    if method == "quadrature":
        value = eta_quadrature_profile(n, t)[-1]
        return EstimateWithError(value=value, method="quadrature", count=ETA_GRID_POINTS)
    raise InvalidParameterError(f"unknown eta method: {method}")


def simplex_time_integral(k: int, t: float) -> float:
    """Integral over (0, t) of eta_k(t - s) ds."""
    return ball_volume(k) * t ** (k / 2 + 1) / (k / 2 + 1)


# =============================================================================
# Bounds
# =============================================================================

def bound_In1(n: int, t: float, bnorm: float) -> float:
    """(2 sqrt(pi) / sqrt(e))^n bnorm^n t^(n/2) / floor(n/2)!."""
    if n < 0:
        raise InvalidParameterError(f"n must be >= 0, got {n}")
    return (2 * math.sqrt(math.pi / math.e)) ** n * bnorm ** n * t ** (n / 2) / math.factorial(n // 2)


def davie_bound(n: int, t: float, bnorm: float, M: float) -> float:
    """M^n bnorm^n t^(n/2) / floor(n/2)!."""
    if M <= 0:
        raise InvalidParameterError(f"Davie constant M must be > 0, got {M}")
    if n < 0:
        raise InvalidParameterError(f"n must be >= 0, got {n}")
    return M ** n * bnorm ** n * t ** (n / 2) / math.factorial(n // 2)


def j6_bound(t: float, bnorm: float) -> float:
    """
    Bound on the (0, 2, 1, 1) kernel term.

    8 bnorm^4 times the sum of two iterated time integrals: one through eta_2,
    the other through the Beta(1/2, 1/2) integral of the last time variable.
    """
    return 8 * bnorm ** 4 * (simplex_time_integral(2, t) + special.beta(0.5, 0.5) * t * t / 2)


# =============================================================================
# Quadrature rules
# =============================================================================

@lru_cache(maxsize=8)
def gauss_hermite_tensor(n: int, nodes: int = HERMITE_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal tensor rule: points (nodes^n, n) and weights summing to 1."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    points = np.array(list(product(x, repeat=n)))
    weights = np.prod(np.array(list(product(w, repeat=n))), axis=1)
    return points, weights


def simplex_rule(n: int, t: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on the ordered simplex via s_k = s_{k-1} + (t - s_{k-1}) u_k."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    u_nodes, u_weights = (x + 1) / 2, w / 2
    u = np.array(list(product(u_nodes, repeat=n)))
    weights = np.prod(np.array(list(product(u_weights, repeat=n))), axis=1)
    times = np.empty_like(u)
    previous = np.zeros(len(u))
    for k in range(n):
        length = t - previous
        weights = weights * length
        times[:, k] = previous + length * u[:, k]
        previous = times[:, k]
    return times, weights


def _brownian_values(times: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """W at `times` (rows) for each standard-normal increment vector in xi: shape (rows, nodes, n)."""
    gaps = np.diff(times, axis=-1, prepend=0.0)
    return np.cumsum(np.sqrt(gaps)[:, None, :] * xi[None, :, :], axis=-1)


def _quadrature_In(spec: DriftSpec, n: int, t: float) -> EstimateWithError:
    _, bprime = drift_functions(spec)
    times, time_weights = simplex_rule(n, t, TIME_NODES[n])
    xi, space_weights = gauss_hermite_tensor(n)
    total = 0.0
    chunk = max(1, 2_000_000 // (len(xi) * n))
    for start in range(0, len(times), chunk):
        w = _brownian_values(times[start:start + chunk], xi)
        inner = np.prod(bprime(w), axis=-1) @ space_weights
        total += float(inner @ time_weights[start:start + chunk])
    return EstimateWithError(value=total, method="quadrature", count=len(times) * len(xi))


# =============================================================================
# Path estimators
# =============================================================================

def _moment_kernel(spec: DriftSpec, t: float, steps: int, n_max: int,
                   rng: np.random.Generator, count: int) -> dict[str, np.ndarray]:
    """Per-path (integral of b'(W) ds)^n / n! for n = 1..n_max, trapezoid in time."""
    _, bprime = drift_functions(spec)
    dt = t / steps
    w = np.zeros(count)
    first = bprime(w)
    running = 0.5 * first
    for _ in range(steps):
        w = w + rng.standard_normal(count) * math.sqrt(dt)
        value = bprime(w)
        running = running + value
    area = dt * (running - 0.5 * value)
    return {f"I{n}": area ** n / math.factorial(n) for n in range(1, n_max + 1)}


def estimate_In_family(spec: DriftSpec, n_max: int, t: float, paths: int = 100_000,
                       steps: int = 1000, seed: int = 0, substreams: Optional[int] = None,
                       workers: Optional[int] = None) -> list[EnsembleEstimate]:
    """I_1(t), ..., I_{n_max}(t) from one shared set of Brownian paths."""
    if not spec.has_derivative:
        raise DerivativeUnavailableError(f"{spec.label} has no derivative; mollify it first")
    kernel = partial(_moment_kernel, spec, t, steps, n_max)
    estimates = ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers,
                                   method="moment_mc")
    return [estimates[f"I{n}"] for n in range(1, n_max + 1)]


def estimate_In(spec: DriftSpec, n: int, t: float, method: str = "quadrature", paths: int = 100_000,
                steps: int = 1000, seed: int = 0, substreams: Optional[int] = None,
                workers: Optional[int] = None) -> EstimateWithError:
    """
    Estimate I_n(t).

    Args:
        spec: Drift with a derivative
        n: Simplex dimension
        t: Horizon
        method: "quadrature" (n <= 3) or "moment_mc"
        paths, steps, seed, substreams, workers: moment_mc ensemble settings

    Returns:
        EstimateWithError (std_error 0 for quadrature)
    """
    if not spec.has_derivative:
        raise DerivativeUnavailableError(f"{spec.label} has no derivative; mollify it first")
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if method == "quadrature":
        if n > MAX_QUADRATURE_N:
            raise InvalidParameterError(f"quadrature handles n <= {MAX_QUADRATURE_N}, got {n}")
        return _quadrature_In(spec, n, t)
    if method == "moment_mc":
        return estimate_In_family(spec, n, t, paths=paths, steps=steps, seed=seed,
                                  substreams=substreams, workers=workers)[-1]
    raise InvalidParameterError(f"unknown I_n method: {method}")


def verify_ibp_pointwise(grid: TimeGrid, spec: DriftSpec, nodes: int = HERMITE_NODES) -> float:
    """|E[prod b'(W_{s_i})] - E[prod b(W_{s_i}) Lambda(W)]| on one Gauss-Hermite tensor rule."""
    if not spec.has_derivative:
        raise DerivativeUnavailableError(f"{spec.label} has no derivative")
    if grid.n > MAX_QUADRATURE_N:
        raise CapExceededError(f"pointwise check handles n <= {MAX_QUADRATURE_N}, got {grid.n}")
    b, bprime = drift_functions(spec)
    times = np.array([[float(s) for s in grid.times]])
    xi, weights = gauss_hermite_tensor(grid.n, nodes)
    w = _brownian_values(times, xi)[0]
    divergence = iterated_divergence(grid)
    left = np.prod(bprime(w), axis=-1) @ weights
    right = (np.prod(b(w), axis=-1) * divergence.evaluate(w)) @ weights
    return float(abs(left - right))


# =============================================================================
# Kernel-product terms
# =============================================================================

def _term_kernel(orders: tuple, spec: DriftSpec, t: float, nodes: int, space: str,
                 rng: np.random.Generator, count: int) -> np.ndarray:
    b, _ = drift_functions(spec)
    n = len(orders)
    volume = t ** n / math.factorial(n)
    times = np.sort(rng.uniform(0.0, t, size=(count, n)), axis=1)
    gaps = np.diff(times, axis=1, prepend=0.0)
    if space == "monte_carlo":
        steps = np.sqrt(gaps) * rng.standard_normal((count, n))
        weight = np.prod(b(np.cumsum(steps, axis=1)), axis=1)
        for i, k in enumerate(orders):
            if k:
                weight = weight * kernel_ratio(gaps[:, i], steps[:, i], k)
        return volume * weight

    xi, space_weights = gauss_hermite_tensor(n, nodes)
    values = np.empty(count)
    for row in range(count):
        steps = np.sqrt(gaps[row]) * xi
        weight = np.prod(b(np.cumsum(steps, axis=1)), axis=1)
        for i, k in enumerate(orders):
            if k:
                weight = weight * kernel_ratio(gaps[row, i], steps[:, i], k)
        values[row] = weight @ space_weights
    return volume * values


def estimate_term(orders: Sequence[int], spec: DriftSpec, t: float, samples: int = 2000,
                  seed: int = 0, nodes: int = TERM_HERMITE_NODES, space: str = "gauss_hermite",
                  substreams: Optional[int] = None, workers: Optional[int] = None) -> EnsembleEstimate:
    """
    Integral over the simplex and R^n of b(y_1)...b(y_n) prod q^(k_i)_{s_i - s_{i-1}}(y_i - y_{i-1}).

    Times are sorted uniforms (volume t^n / n!). For each time sample the space
    integral is a Gauss-Hermite tensor rule over the increments ("gauss_hermite"),
    or a single Gaussian-increment draw ("monte_carlo").
    """
    orders = tuple(int(k) for k in orders)
    if not 1 <= len(orders) <= MAX_TERM_FACTORS:
        raise CapExceededError(f"term estimator handles 1..{MAX_TERM_FACTORS} factors, got {len(orders)}")
    if any(k not in (0, 1, 2) for k in orders):
        raise InvalidParameterError(f"kernel orders must be 0, 1 or 2, got {orders}")
    if space not in ("gauss_hermite", "monte_carlo"):
        raise InvalidParameterError(f"unknown space integration: {space}")
    kernel = partial(_term_kernel, orders, spec, t, nodes, space)
    logger.info(f"🔬 TERM {orders} for {spec.label}, t={t}, {samples} time samples")
    return ensemble_estimates(kernel, samples, seed, substreams=substreams, workers=workers,
                              method=f"term_{space}")["value"]


# =============================================================================
# Empirical Davie constants
# =============================================================================

@dataclass
class DavieEntry:
    """One empirical constant M_n for a drift."""
    n: int
    estimate: EnsembleEstimate
    m_hat: float
    informative: bool


@dataclass
class DavieProbe:
    """Empirical constants for one drift, with the fitted trend over informative n."""
    drift: str
    entries: list[DavieEntry] = field(default_factory=list)
    slope: float = 0.0

    @property
    def passed(self) -> bool:
        return self.slope <= TREND_LIMIT

    @property
    def m_max(self) -> float:
        return max((entry.m_hat for entry in self.entries), default=0.0)


def empirical_constant(value: float, n: int, t: float, bnorm: float) -> float:
    """(|I_n| floor(n/2)!)^(1/n) / (bnorm sqrt(t)); 0 for a zero drift."""
    if bnorm == 0:
        return 0.0
    return (abs(value) * math.factorial(n // 2)) ** (1 / n) / (bnorm * math.sqrt(t))


def probe_davie(specs: Sequence[DriftSpec], n_max: int, t: float, paths: int = 100_000,
                steps: int = 1000, seed: int = 0, substreams: Optional[int] = None,
                workers: Optional[int] = None) -> list[DavieProbe]:
    """
    Empirical Davie constants M_n for each drift and n <= n_max.

    Entries whose |I_n| is within three standard errors of zero carry no scale
    information (odd moments of symmetric drifts) and are left out of the trend fit.
    """
    if n_max > MAX_DAVIE_N:
        raise CapExceededError(f"Davie probe is capped at n <= {MAX_DAVIE_N}, got {n_max}")
    probes = []
    for spec in specs:
        estimates = estimate_In_family(spec, n_max, t, paths=paths, steps=steps, seed=seed,
                                       substreams=substreams, workers=workers)
        probe = DavieProbe(drift=spec.label)
        for n, estimate in enumerate(estimates, start=1):
            informative = estimate.value != 0 and abs(estimate.value) > 3 * estimate.std_error
            probe.entries.append(DavieEntry(
                n=n,
                estimate=estimate,
                m_hat=empirical_constant(estimate.value, n, t, spec.bound),
                informative=informative,
            ))
        points = [(e.n, e.m_hat) for e in probe.entries if e.informative]
        if len(points) >= 2:
            ns, ms = zip(*points)
            probe.slope = float(np.polyfit(ns, ms, 1)[0])
        logger.info(f"📈 DAVIE {probe.drift}: M_max={probe.m_max:.4f}, slope={probe.slope:+.4f}")
        probes.append(probe)
    return probes
