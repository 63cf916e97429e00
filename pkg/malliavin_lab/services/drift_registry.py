"""
Drift Registry - Catalog of drift functions b with sup-norm and smoothness metadata.

Mollification b_n = b * phi_n uses the bump phi(x) = C exp(-1/(1 - x^2)) on (-1, 1)
and a fixed 64-node Gauss-Legendre rule over its support (split at the jump for
discontinuous drifts).
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from malliavin_lab.shared.errors import (
    DerivativeUnavailableError,
    InvalidParameterError,
    UnknownDriftError,
)

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 64
BOUND_LATTICE = (-50.0, 50.0, 10_000)
TABLE_POINTS_PER_SUPPORT = 128


@dataclass(frozen=True)
class DriftSpec:
    """A named drift with its parameters and metadata."""

    name: str
    params: tuple = ()
    bound: float = 0.0
    has_derivative: bool = True
    smooth: bool = True
    within_hypotheses: bool = True
    mollification: Optional[int] = None

    @property
    def label(self) -> str:
        params = ",".join(f"{p:g}" for p in self.params)
        base = f"{self.name}({params})"
        return f"{base}*phi_{self.mollification}" if self.mollification else base


# Drift families: default parameters, value, derivative, bound, jump locations.
DRIFT_FAMILIES = {
    "zero": {
        "defaults": (),
        "b": lambda p, x: np.zeros_like(x),
        "bprime": lambda p, x: np.zeros_like(x),
        "bound": lambda p: 0.0,
        "jumps": (),
    },
    "const": {
        "defaults": (1.0,),
        "b": lambda p, x: np.full_like(x, p[0]),
        "bprime": lambda p, x: np.zeros_like(x),
        "bound": lambda p: abs(p[0]),
        "jumps": (),
    },
    "sin": {
        "defaults": (1.0,),
        "b": lambda p, x: p[0] * np.sin(x),
        "bprime": lambda p, x: p[0] * np.cos(x),
        "bound": lambda p: abs(p[0]),
        "jumps": (),
    },
    "cos": {
        "defaults": (1.0,),
        "b": lambda p, x: p[0] * np.cos(x),
        "bprime": lambda p, x: -p[0] * np.sin(x),
        "bound": lambda p: abs(p[0]),
        "jumps": (),
    },
    "scaled_tanh": {
        "defaults": (1.0, 1.0),
        "b": lambda p, x: p[0] * np.tanh(p[1] * x),
        "bprime": lambda p, x: p[0] * p[1] / np.cosh(p[1] * x) ** 2,
        "bound": lambda p: abs(p[0]),
        "jumps": (),
    },
    "sign": {
        "defaults": (1.0,),
        "b": lambda p, x: p[0] * np.sign(x),
        "bprime": None,
        "bound": lambda p: abs(p[0]),
        "jumps": (0.0,),
    },
    "linear_test": {
        "defaults": (-1.0,),
        "b": lambda p, x: p[0] * x,
        "bprime": lambda p, x: np.full_like(x, p[0]),
        "bound": lambda p: math.inf,
        "jumps": (),
    },
}


def available_drifts() -> list[str]:
    return list(DRIFT_FAMILIES)


def get_drift(name: str, params=None) -> DriftSpec:
    """
    Look up a drift family and bind its parameters.

    Args:
        name: Registry name
        params: Leading parameters; missing trailing ones take the family defaults

    Returns:
        DriftSpec with exact bound metadata
    """
    family = DRIFT_FAMILIES.get(name)
    if family is None:
        raise UnknownDriftError(f"Unknown drift: {name}. Available: {', '.join(DRIFT_FAMILIES)}")
    defaults = family["defaults"]
    given = tuple(float(p) for p in (params or ()))
    if len(given) > len(defaults):
        raise InvalidParameterError(f"drift {name} takes at most {len(defaults)} parameters, got {len(given)}")
    bound_params = given + defaults[len(given):]
    has_derivative = family["bprime"] is not None
    return DriftSpec(
        name=name,
        params=bound_params,
        bound=family["bound"](bound_params),
        has_derivative=has_derivative,
        smooth=has_derivative,
        within_hypotheses=name != "linear_test",
    )


# =============================================================================
# Mollifier
# =============================================================================

def _raw_bump(v):
    v = np.asarray(v, dtype=float)
    inside = np.abs(v) < 1
    safe = np.where(inside, v, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe * safe)), 0.0)


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """C such that C exp(-1/(1-x^2)) integrates to 1 over (-1, 1)."""
    mass, _ = integrate.quad(lambda v: float(_raw_bump(v)), -1.0, 1.0, epsabs=1e-15)
    return 1.0 / mass


def bump(v):
    return bump_normalization() * _raw_bump(v)


def bump_derivative(v):
    v = np.asarray(v, dtype=float)
    inside = np.abs(v) < 1
    safe = np.where(inside, v, 0.0)
    return np.where(inside, bump(safe) * (-2.0 * safe / (1.0 - safe * safe) ** 2), 0.0)


@lru_cache(maxsize=None)
def _legendre() -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(QUADRATURE_NODES)


def _convolve(spec: DriftSpec, x: np.ndarray, derivative: bool) -> np.ndarray:
    """b * phi_n (or b * phi_n') at x, split at the drift's jump when it falls in the support."""
    family = DRIFT_FAMILIES[spec.name]
    n = spec.mollification
    nodes, weights = _legendre()
    kernel = bump_derivative if derivative else bump
    factor = n if derivative else 1.0

    flat = np.asarray(x, dtype=float).ravel()
    cuts = [np.full_like(flat, -1.0)]
    for jump in family["jumps"]:
        cuts.append(np.clip(n * (flat - jump), -1.0, 1.0))
    cuts.append(np.full_like(flat, 1.0))

    total = np.zeros_like(flat)
    for lo, hi in zip(cuts, cuts[1:]):
        half = (hi - lo)[:, None] / 2
        v = lo[:, None] + half * (nodes + 1.0)
        integrand = family["b"](spec.params, flat[:, None] - v / n) * kernel(v)
        total += factor * np.sum(weights * half * integrand, axis=1)
    return total.reshape(np.shape(x))


def mollify(spec: DriftSpec, n: int) -> DriftSpec:
    """b_n = b * phi_n with phi_n(x) = n phi(n x); b_n' = b * phi_n'."""
    if int(n) != n or n < 1:
        raise InvalidParameterError(f"mollification level must be a positive integer, got {n}")
    if spec.mollification is not None:
        raise InvalidParameterError(f"{spec.label} is already mollified")
    logger.debug(f"Mollifying {spec.label} at level {n}")
    return replace(spec, mollification=int(n), has_derivative=True, smooth=True)


# =============================================================================
# Evaluation
# =============================================================================

def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def eval_b(spec: DriftSpec, x):
    x = np.asarray(x, dtype=float)
    if spec.mollification:
        return _scalar(_convolve(spec, x, derivative=False))
    return _scalar(DRIFT_FAMILIES[spec.name]["b"](spec.params, x))


def eval_bprime(spec: DriftSpec, x):
    if not spec.has_derivative:
        raise DerivativeUnavailableError(f"{spec.label} has no derivative; mollify it first")
    x = np.asarray(x, dtype=float)
    if spec.mollification:
        return _scalar(_convolve(spec, x, derivative=True))
    return _scalar(DRIFT_FAMILIES[spec.name]["bprime"](spec.params, x))


@lru_cache(maxsize=16)
def _mollified_table(spec: DriftSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    low, high, _ = BOUND_LATTICE
    spacing = 1.0 / (TABLE_POINTS_PER_SUPPORT * spec.mollification)
    nodes = np.arange(low, high + spacing / 2, spacing)
    values = np.concatenate([_convolve(spec, chunk, False) for chunk in np.array_split(nodes, 64)])
    slopes = np.concatenate([_convolve(spec, chunk, True) for chunk in np.array_split(nodes, 64)])
    logger.info(f"🧮 Tabulated {spec.label} on {nodes.size} nodes")
    return nodes, values, slopes


def _tabulated(spec: DriftSpec, derivative: bool) -> Callable[[np.ndarray], np.ndarray]:
    def evaluate(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes, values, slopes = _mollified_table(spec)
        result = np.interp(x, nodes, slopes if derivative else values)
        outside = (x < nodes[0]) | (x > nodes[-1])
        if np.any(outside):
            result[outside] = _convolve(spec, x[outside], derivative)
        return result

    return evaluate


def drift_functions(spec: DriftSpec) -> tuple[Callable, Optional[Callable]]:
    """
    Vectorized (b, b') for path simulation.

    Mollified drifts are read from a linear-interpolation table over the bound
    lattice range; b' is None when the drift has no derivative.
    """
    if spec.mollification:
        return _tabulated(spec, False), _tabulated(spec, True)
    family = DRIFT_FAMILIES[spec.name]

    def b(x):
        return family["b"](spec.params, np.asarray(x, dtype=float))

    if family["bprime"] is None:
        return b, None

    def bprime(x):
        return family["bprime"](spec.params, np.asarray(x, dtype=float))

    return b, bprime


def bound_lattice() -> np.ndarray:
    low, high, count = BOUND_LATTICE
    return np.linspace(low, high, count)


def check_bound(spec: DriftSpec) -> float:
    """Largest |b| on the 10^4-point lattice over [-50, 50]."""
    return float(np.max(np.abs(eval_b(spec, bound_lattice()))))
