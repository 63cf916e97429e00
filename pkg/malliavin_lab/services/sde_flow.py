"""
SDE Flow - Euler-Maruyama paths of dX = b(X) dt + dW and their derivatives.

Path integrals (flow derivative, Duhamel formula, gradient norm) use the
trapezoid rule on the simulation grid. The scheme is written as
X_k = x0 + W_k + (accumulated drift), so a zero drift reproduces x0 + W bitwise.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from malliavin_lab.services.drift_registry import DriftSpec, drift_functions, mollify
from malliavin_lab.services.gaussian_algebra import CameronMartinVector
from malliavin_lab.shared.ensemble import (
    EnsembleEstimate,
    ensemble_estimates,
    substream_rng,
)
from malliavin_lab.shared.errors import (
    BreakpointError,
    DerivativeUnavailableError,
    InvalidParameterError,
    StepConfigurationError,
)

logger = logging.getLogger(__name__)

STEP_TOLERANCE = 1e-9
SHIFT_EPSILON = 1e-3
SCALING_BAND = 0.15
DEFAULT_GAPS = (0.04, 0.16, 0.64)


@dataclass(frozen=True, eq=False)
class PathSample:
    """One Euler-Maruyama trajectory with the noise that drove it."""

    x0: float
    dt: float
    noise: np.ndarray
    states: np.ndarray
    wiener: np.ndarray

    @property
    def steps(self) -> int:
        return self.noise.shape[-1]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def step_count(t: float, dt: float) -> int:
    """Integer number of steps of size dt in t."""
    if dt <= 0 or t <= 0:
        raise StepConfigurationError(f"need t > 0 and dt > 0, got t={t}, dt={dt}")
    steps = int(round(t / dt))
    if steps < 1 or abs(steps * dt - t) > STEP_TOLERANCE * max(t, 1.0):
        raise StepConfigurationError(f"dt={dt} does not divide t={t} into whole steps")
    return steps


def _require_derivative(spec: DriftSpec) -> Callable:
    _, bprime = drift_functions(spec)
    if bprime is None or not spec.has_derivative:
        raise DerivativeUnavailableError(f"{spec.label} has no derivative; mollify it first")
    return bprime


# =============================================================================
# Simulation
# =============================================================================

def euler_states(b: Callable, x0, dt: float, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    States and running Brownian motion for a batch of paths.

    Args:
        b: Vectorized drift
        x0: Initial points, broadcastable against noise.shape[:-1]
        dt: Step
        noise: Increments with time on the last axis

    Returns:
        (states, wiener), both with steps + 1 points on the last axis
    """
    noise = np.asarray(noise, dtype=float)
    batch = np.broadcast_shapes(np.shape(x0), noise.shape[:-1])
    steps = noise.shape[-1]
    wiener = np.concatenate([np.zeros(noise.shape[:-1] + (1,)), np.cumsum(noise, axis=-1)], axis=-1)
    states = np.empty(batch + (steps + 1,))
    states[..., 0] = x0
    drift = np.zeros(batch)
    for k in range(steps):
        drift = drift + b(states[..., k]) * dt
        states[..., k + 1] = x0 + wiener[..., k + 1] + drift
    return states, np.broadcast_to(wiener, batch + (steps + 1,))


def simulate_from_noise(spec: DriftSpec, x0: float, dt: float, noise) -> PathSample:
    """Re-run the scheme on stored increments."""
    b, _ = drift_functions(spec)
    noise = np.asarray(noise, dtype=float)
    states, wiener = euler_states(b, float(x0), dt, noise)
    return PathSample(x0=float(x0), dt=dt, noise=noise, states=states, wiener=np.array(wiener))


def simulate_path(spec: DriftSpec, x0: float, t: float, dt: float, seed: int, substream: int = 0) -> PathSample:
    """One trajectory on [0, t] driven by substream `substream` of `seed`."""
    steps = step_count(t, dt)
    noise = substream_rng(seed, substream).standard_normal(steps) * math.sqrt(dt)
    return simulate_from_noise(spec, x0, dt, noise)


def _cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    segments = 0.5 * dt * (values[..., 1:] + values[..., :-1])
    return np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(segments, axis=-1)], axis=-1)


def log_flow_profile(bprime: Callable, states: np.ndarray, dt: float) -> np.ndarray:
    """C_k = integral of b'(X) over [0, t_k]; X'_{t_j, t_k} = exp(C_j - C_k)."""
    return _cumulative_trapezoid(bprime(states), dt)


# =============================================================================
# Pathwise derivatives
# =============================================================================

def flow_derivative(path: PathSample, spec: DriftSpec) -> float:
    """X'_t = exp(integral of b'(X_s) ds) along the path."""
    bprime = _require_derivative(spec)
    return float(np.exp(log_flow_profile(bprime, path.states, path.dt)[-1]))


def flow_finite_difference(spec: DriftSpec, x0: float, noise, dt: float, eps: float = 1e-4) -> float:
    """(X_t(x0 + eps) - X_t(x0 - eps)) / (2 eps) on common noise."""
    up = simulate_from_noise(spec, x0 + eps, dt, noise).states[-1]
    down = simulate_from_noise(spec, x0 - eps, dt, noise).states[-1]
    return float((up - down) / (2 * eps))


def _step_index(path: PathSample, t: float) -> int:
    index = int(round(t / path.dt))
    if abs(index * path.dt - t) > STEP_TOLERANCE * max(t, 1.0) or not 0 <= index <= path.steps:
        raise StepConfigurationError(f"time {t} is not on the path grid (dt={path.dt}, horizon={path.horizon})")
    return index


def transition_derivative(path: PathSample, spec: DriftSpec, s: float, t: float) -> float:
    """X'_{t,s} = exp(integral over [s, t] of b'(X))."""
    profile = log_flow_profile(_require_derivative(spec), path.states, path.dt)
    return float(np.exp(profile[_step_index(path, t)] - profile[_step_index(path, s)]))


def flow_cocycle_residual(path: PathSample, spec: DriftSpec, r: float, s: float, t: float) -> float:
    """Relative gap in X'_{t,s} X'_{s,r} = X'_{t,r}."""
    composed = transition_derivative(path, spec, s, t) * transition_derivative(path, spec, r, s)
    direct = transition_derivative(path, spec, r, t)
    return abs(composed - direct) / direct


def increment_factorization_residual(path: PathSample, spec: DriftSpec, t1: float, t2: float) -> float:
    """Relative gap in X'_{t2} = X'_{t1} exp(integral over [t1, t2] of b'(X))."""
    profile = log_flow_profile(_require_derivative(spec), path.states, path.dt)
    k1, k2 = _step_index(path, t1), _step_index(path, t2)
    direct = math.exp(profile[k2])
    factored = math.exp(profile[k1]) * math.exp(profile[k2] - profile[k1])
    return abs(direct - factored) / direct


def girsanov_weight(path: PathSample, spec: DriftSpec) -> float:
    """N_t = exp(-sum b(X_k) dW_k - 1/2 sum b(X_k)^2 dt)."""
    b, _ = drift_functions(spec)
    return float(np.exp(_log_girsanov(b, path.states, path.noise, path.dt)))


def _log_girsanov(b: Callable, states: np.ndarray, noise: np.ndarray, dt: float) -> np.ndarray:
    drift = b(states[..., :-1])
    return -np.sum(drift * noise, axis=-1) - 0.5 * dt * np.sum(drift * drift, axis=-1)


def _check_breakpoints(path: PathSample, h: CameronMartinVector) -> None:
    for point in h.breakpoints:
        if float(point) <= path.horizon + STEP_TOLERANCE:
            index = round(float(point) / path.dt)
            if abs(index * path.dt - float(point)) > STEP_TOLERANCE * max(float(point), 1.0):
                raise BreakpointError(f"breakpoint {point} is not on the path grid (dt={path.dt})")


def _interval_slopes(path: PathSample, h: CameronMartinVector) -> np.ndarray:
    """h' on each step interval [t_k, t_{k+1})."""
    _check_breakpoints(path, h)
    midpoints = (np.arange(path.steps) + 0.5) * path.dt
    return np.array([float(h.slope_at(m)) for m in midpoints])


def malliavin_derivative_path(path: PathSample, spec: DriftSpec, h: CameronMartinVector) -> float:
    """
    D_h X_t by the Duhamel formula.

    D_h X_t = integral over [0, t] of X'_{t,s} h'(s) ds, with X'_{t,s} from the
    trapezoid profile and the outer integral taken interval by interval.
    """
    profile = log_flow_profile(_require_derivative(spec), path.states, path.dt)
    transition = np.exp(profile[-1] - profile)
    slopes = _interval_slopes(path, h)
    return float(np.sum(slopes * path.dt * 0.5 * (transition[:-1] + transition[1:])))


def wiener_shift_derivative(path: PathSample, spec: DriftSpec, h: CameronMartinVector,
                            eps: float = SHIFT_EPSILON) -> float:
    """(X_t(w + eps h) - X_t(w - eps h)) / (2 eps) by shifting the stored increments."""
    shift = eps * _interval_slopes(path, h) * path.dt
    up = simulate_from_noise(spec, path.x0, path.dt, path.noise + shift).states[-1]
    down = simulate_from_noise(spec, path.x0, path.dt, path.noise - shift).states[-1]
    return float((up - down) / (2 * eps))


def gradient_norm(path: PathSample, spec: DriftSpec, t: Optional[float] = None) -> float:
    """sqrt(integral over [0, t] of X'_{t,tau}^2 d tau), trapezoid on the path grid."""
    profile = log_flow_profile(_require_derivative(spec), path.states, path.dt)
    k = path.steps if t is None else _step_index(path, t)
    transition = np.exp(profile[k] - profile[: k + 1])
    return float(math.sqrt(trapezoid(transition ** 2, dx=path.dt)))


# =============================================================================
# Closed-form companions
# =============================================================================

def series_half_factorial(x: float, terms: int = 120) -> tuple[float, float]:
    """Partial sum of x^n / floor(n/2)! and its limit (1 + x) e^(x^2)."""
    if x < 0:
        raise InvalidParameterError(f"x must be >= 0, got {x}")
    partial_sum = math.fsum(x ** n / math.factorial(n // 2) for n in range(terms))
    return partial_sum, (1 + x) * math.exp(x * x)


def moment_bound_value(p: float, t: float, T: float, bnorm: float, M: float) -> float:
    """(1 + 2 p M sqrt(t) bnorm) exp((1 + 2 p^2 M^2) T bnorm^2)."""
    if M <= 0:
        raise InvalidParameterError(f"Davie constant M must be > 0, got {M}")
    return (1 + 2 * p * M * math.sqrt(t) * bnorm) * math.exp((1 + 2 * p * p * M * M) * T * bnorm * bnorm)


# =============================================================================
# Ensemble kernels
# =============================================================================

def _noise(rng: np.random.Generator, count: int, steps: int, dt: float) -> np.ndarray:
    return rng.standard_normal((count, steps)) * math.sqrt(dt)


def _endpoint_kernel(spec, x0, t, dt, rng, count):
    b, _ = drift_functions(spec)
    states, _ = euler_states(b, x0, dt, _noise(rng, count, step_count(t, dt), dt))
    return states[:, -1]


def _girsanov_kernel(spec, x0, t, dt, rng, count):
    b, _ = drift_functions(spec)
    noise = _noise(rng, count, step_count(t, dt), dt)
    states, _ = euler_states(b, x0, dt, noise)
    weight = np.exp(_log_girsanov(b, states, noise, dt))
    return {"weight": weight, "weighted_square": states[:, -1] ** 2 * weight}


def _exp_moment_kernel(spec, p, x0, t, dt, rng, count):
    b, bprime = drift_functions(spec)
    noise = _noise(rng, count, step_count(t, dt), dt)
    states, wiener = euler_states(b, x0, dt, noise)
    drifted = log_flow_profile(bprime, states, dt)[:, -1]
    brownian = log_flow_profile(bprime, x0 + wiener, dt)[:, -1]
    return {"lhs": np.exp(p * drifted), "rhs_inner": np.exp(2 * p * brownian)}


def _gradient_kernel(spec, x0, t, dt, powers, rng, count):
    b, bprime = drift_functions(spec)
    states, _ = euler_states(b, x0, dt, _noise(rng, count, step_count(t, dt), dt))
    profile = log_flow_profile(bprime, states, dt)
    transition = np.exp(profile[:, -1:] - profile)
    norms = np.sqrt(trapezoid(transition ** 2, dx=dt, axis=-1))
    return {f"p{p:g}": norms ** p for p in powers}


def _sobolev_kernel(spec, t, R, p, resolution, dt, rng, count):
    b, bprime = drift_functions(spec)
    xs = np.linspace(-R, R, resolution)
    noise = _noise(rng, count, step_count(t, dt), dt)[:, None, :]
    states, _ = euler_states(b, xs, dt, noise)
    derivative = np.exp(log_flow_profile(bprime, states, dt)[..., -1])
    function_part = trapezoid(np.abs(states[..., -1]) ** p, xs, axis=-1)
    derivative_part = trapezoid(np.abs(derivative) ** p, xs, axis=-1)
    return {
        "function": function_part,
        "derivative": derivative_part,
        "total": function_part + derivative_part,
    }


def _continuity_kernel(spec, t1, gaps, q, R, p, resolution, dt, rng, count):
    b, bprime = drift_functions(spec)
    xs = np.linspace(-R, R, resolution)
    horizon = t1 + max(gaps)
    noise = _noise(rng, count, step_count(horizon, dt), dt)[:, None, :]
    states, _ = euler_states(b, xs, dt, noise)
    derivative = np.exp(log_flow_profile(bprime, states, dt))
    k1 = step_count(t1, dt)
    samples = {}
    for i, gap in enumerate(gaps):
        k2 = step_count(t1 + gap, dt)
        jump = np.abs(states[..., k2] - states[..., k1]) ** p
        slope_jump = np.abs(derivative[..., k2] - derivative[..., k1]) ** p
        norm = trapezoid(jump + slope_jump, xs, axis=-1) ** (1 / p)
        samples[f"gap{i}"] = norm ** q
    return samples


# =============================================================================
# Ensemble experiments
# =============================================================================

def endpoint_mean(spec: DriftSpec, x0: float, t: float, dt: float, paths: int, seed: int,
                  substreams: Optional[int] = None, workers: Optional[int] = None) -> EnsembleEstimate:
    kernel = partial(_endpoint_kernel, spec, x0, t, dt)
    return ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)["value"]


def girsanov_check(spec: DriftSpec, x0: float, t: float, dt: float, paths: int, seed: int,
                   substreams: Optional[int] = None, workers: Optional[int] = None) -> dict[str, EnsembleEstimate]:
    """E[N_t] and E[X_t^2 N_t] (targets 1 and x0^2 + t)."""
    kernel = partial(_girsanov_kernel, spec, x0, t, dt)
    return ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)


@dataclass
class ExpMomentReport:
    """Both sides of E[exp(p int b'(X))] <= exp(|b|^2 T / 2) sqrt(E[exp(2p int b'(W))])."""
    lhs: EnsembleEstimate
    rhs: float
    rhs_std_error: float

    @property
    def margin(self) -> float:
        return 3 * math.hypot(self.lhs.std_error, self.rhs_std_error)

    @property
    def passed(self) -> bool:
        return self.lhs.value <= self.rhs + self.margin


def exp_moment_check(spec: DriftSpec, p: float, t: float, T: float, dt: float, paths: int, seed: int,
                     x0: float = 0.0, substreams: Optional[int] = None,
                     workers: Optional[int] = None) -> ExpMomentReport:
    """
    Monte Carlo check of the exponential-moment domination.

    Both sides share the driving noise; the Brownian side starts at x0 as well.
    """
    _require_derivative(spec)
    if t > T:
        raise InvalidParameterError(f"need t <= T, got t={t}, T={T}")
    kernel = partial(_exp_moment_kernel, spec, p, x0, t, dt)
    estimates = ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)
    inner = estimates["rhs_inner"]
    factor = math.exp(spec.bound ** 2 * T / 2)
    rhs = factor * math.sqrt(inner.value)
    rhs_se = factor * inner.std_error / (2 * math.sqrt(inner.value))
    report = ExpMomentReport(lhs=estimates["lhs"], rhs=rhs, rhs_std_error=rhs_se)
    logger.info(f"📐 EXP-MOMENT {spec.label}: lhs={report.lhs.value:.5f} rhs={rhs:.5f} passed={report.passed}")
    return report


def gradient_norm_moments(spec: DriftSpec, t: float, dt: float, paths: int, seed: int,
                          powers: Sequence[float] = (2, 4), x0: float = 0.0,
                          substreams: Optional[int] = None, workers: Optional[int] = None) -> dict[float, EnsembleEstimate]:
    _require_derivative(spec)
    kernel = partial(_gradient_kernel, spec, x0, t, dt, tuple(powers))
    estimates = ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)
    return {p: estimates[f"p{p:g}"] for p in powers}


def sobolev_norm_estimate(spec: DriftSpec, t: float, R: float, p: float, resolution: int, paths: int,
                          dt: float, seed: int, part: str = "total", substreams: Optional[int] = None,
                          workers: Optional[int] = None) -> EnsembleEstimate:
    """
    E[integral over (-R, R) of |X_t(x)|^p + |X_t'(x)|^p dx].

    All lattice points share the driving noise; `part` selects "function",
    "derivative" or "total".
    """
    _require_derivative(spec)
    if part not in ("function", "derivative", "total"):
        raise InvalidParameterError(f"unknown Sobolev part: {part}")
    if resolution < 2 or R <= 0:
        raise InvalidParameterError(f"need resolution >= 2 and R > 0, got {resolution}, {R}")
    kernel = partial(_sobolev_kernel, spec, t, R, p, resolution, dt)
    return ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)[part]


@dataclass
class TimeContinuityReport:
    """Increment moments per time gap and the fitted log-log exponent."""
    gaps: tuple
    estimates: list[EnsembleEstimate]
    slope: float
    target: float

    @property
    def passed(self) -> bool:
        return abs(self.slope - self.target) <= SCALING_BAND * self.target


def time_continuity_check(spec: DriftSpec, q: float = 4.0, R: float = 1.0, p: float = 4.0,
                          gaps: Sequence[float] = DEFAULT_GAPS, t1: float = 0.1, resolution: int = 21,
                          paths: int = 2000, dt: float = 1e-3, seed: int = 0,
                          substreams: Optional[int] = None, workers: Optional[int] = None) -> TimeContinuityReport:
    """
    Fit the exponent of E[||X_{t1+g} - X_{t1}||^q] in the gap g.

    The norm is the W^p_1 norm over (-R, R): function and derivative parts.
    """
    _require_derivative(spec)
    if q <= 2:
        raise InvalidParameterError(f"need q > 2, got {q}")
    gaps = tuple(float(g) for g in gaps)
    kernel = partial(_continuity_kernel, spec, t1, gaps, q, R, p, resolution, dt)
    estimates = ensemble_estimates(kernel, paths, seed, substreams=substreams, workers=workers)
    ordered = [estimates[f"gap{i}"] for i in range(len(gaps))]
    slope = float(np.polyfit(np.log(gaps), np.log([e.value for e in ordered]), 1)[0])
    logger.info(f"⏱️ CONTINUITY {spec.label}: slope={slope:.4f}, target={q / 2}")
    return TimeContinuityReport(gaps=gaps, estimates=ordered, slope=slope, target=q / 2)


@dataclass
class AveragedFlow:
    """Endpoint and flow derivative per mollification level, with running (Cesaro) means."""
    levels: list[int] = field(default_factory=list)
    endpoints: list[float] = field(default_factory=list)
    derivatives: list[float] = field(default_factory=list)
    mean_endpoints: list[float] = field(default_factory=list)
    mean_derivatives: list[float] = field(default_factory=list)


def averaged_mollified_flow(spec: DriftSpec, levels: Sequence[int], x0: float, t: float, dt: float,
                            seed: int) -> AveragedFlow:
    """Common-noise flows of b * phi_n over the levels, with their running averages."""
    steps = step_count(t, dt)
    noise = substream_rng(seed, 0).standard_normal(steps) * math.sqrt(dt)
    result = AveragedFlow()
    for level in levels:
        smoothed = mollify(spec, level)
        path = simulate_from_noise(smoothed, x0, dt, noise)
        result.levels.append(level)
        result.endpoints.append(float(path.states[-1]))
        result.derivatives.append(flow_derivative(path, smoothed))
        result.mean_endpoints.append(float(np.mean(result.endpoints)))
        result.mean_derivatives.append(float(np.mean(result.derivatives)))
    return result
