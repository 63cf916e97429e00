"""
Gaussian Algebra - Exact polynomial calculus in the grid variables W_{s_1}, ..., W_{s_n}.

Covariance and inverse covariance of a time grid, the dual Cameron-Martin
vectors h_j, directional derivatives, divergences, the iterated divergence
Lambda, and Wick (Isserlis) expectations.

Two coefficient modes:
- exact: grid times and coefficients are Fractions
- float: coefficients below FLOAT_DROP are dropped after every operation
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Mapping, Optional, Union

import numpy as np
from scipy import integrate, stats

from malliavin_lab.shared.errors import (
    BreakpointError,
    CapExceededError,
    DegenerateGridError,
    GridMismatchError,
    InvalidParameterError,
)

logger = logging.getLogger(__name__)

Number = Union[Fraction, float]
Exponents = tuple[int, ...]

MAX_DIVERGENCE_POINTS = 8
MAX_EXPECTATION_DEGREE = 16
FLOAT_DROP = 1e-14
DEGENERACY_RTOL = 1e-14
BREAKPOINT_RTOL = 1e-12


def to_fraction(value) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats (via repr)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(repr(float(value)))


# =============================================================================
# Grid and covariance
# =============================================================================

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times 0 < s_1 < ... < s_n <= T."""

    times: tuple
    horizon: Optional[Number] = None
    exact: bool = False

    def __post_init__(self):
        convert = to_fraction if self.exact else float
        times = tuple(convert(s) for s in self.times)
        if not times:
            raise InvalidParameterError("a time grid needs at least one point")
        if times[0] <= 0:
            raise InvalidParameterError(f"grid times must be > 0, got {times[0]}")
        for a, b in zip(times, times[1:]):
            if b - a <= DEGENERACY_RTOL * max(abs(a), abs(b)):
                raise DegenerateGridError(f"grid times {a} and {b} are not strictly increasing")
        horizon = times[-1] if self.horizon is None else convert(self.horizon)
        if horizon < times[-1]:
            raise InvalidParameterError(f"horizon {horizon} is before the last grid time {times[-1]}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "horizon", horizon)

    @property
    def n(self) -> int:
        return len(self.times)

    def zero(self) -> Number:
        return Fraction(0) if self.exact else 0.0

    def one(self) -> Number:
        return Fraction(1) if self.exact else 1.0

    def coerce(self, value) -> Number:
        return to_fraction(value) if self.exact else float(value)

    def gaps(self) -> tuple:
        """Increments s_i - s_{i-1} with s_0 = 0."""
        previous = (self.zero(),) + self.times[:-1]
        return tuple(s - p for s, p in zip(self.times, previous))

    def index_of(self, tau) -> Optional[int]:
        """Index i with times[i] == tau (relative tolerance in float mode), else None."""
        for i, s in enumerate(self.times):
            if self.exact and isinstance(tau, (Fraction, int)):
                if s == tau:
                    return i
            elif abs(float(s) - float(tau)) <= BREAKPOINT_RTOL * max(abs(float(s)), 1.0):
                return i
        return None


@dataclass(frozen=True)
class _GridMatrix:
    entries: tuple

    @property
    def n(self) -> int:
        return len(self.entries)

    def __getitem__(self, index):
        i, j = index
        return self.entries[i][j]

    def to_numpy(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.entries])


@dataclass(frozen=True)
class CovarianceMatrix(_GridMatrix):
    """Covariance of (W_{s_1}, ..., W_{s_n}): entries min(s_i, s_j)."""


@dataclass(frozen=True)
class InverseCovariance(_GridMatrix):
    """Tridiagonal inverse of the grid covariance."""


def build_covariance(grid: TimeGrid) -> CovarianceMatrix:
    s = grid.times
    return CovarianceMatrix(tuple(tuple(min(a, b) for b in s) for a in s))


def invert_covariance(grid: TimeGrid) -> InverseCovariance:
    """
    Closed-form tridiagonal inverse of the covariance.

    Diagonal i is 1/(s_i - s_{i-1}) + 1/(s_{i+1} - s_i) (the last one has only
    the first part), off-diagonal (i, i+1) is -1/(s_{i+1} - s_i).
    """
    s = grid.times
    n = grid.n
    rows = [[grid.zero()] * n for _ in range(n)]
    previous = grid.zero()
    for i in range(n):
        rows[i][i] = 1 / (s[i] - previous)
        if i < n - 1:
            right = s[i + 1] - s[i]
            rows[i][i] += 1 / right
            rows[i][i + 1] = rows[i + 1][i] = -1 / right
        previous = s[i]
    return InverseCovariance(tuple(tuple(row) for row in rows))


def dense_inverse(grid: TimeGrid) -> np.ndarray:
    """Dense linear-solve inverse, the oracle for invert_covariance."""
    covariance = build_covariance(grid).to_numpy()
    return np.linalg.solve(covariance, np.eye(grid.n))


# =============================================================================
# Cameron-Martin vectors
# =============================================================================

@dataclass(frozen=True)
class CameronMartinVector:
    """
    Element h of the Cameron-Martin space with piecewise-constant derivative.

    `slopes[k]` is the value of h' on [breakpoints[k], breakpoints[k+1]); h(0) = 0.
    """

    breakpoints: tuple
    slopes: tuple

    def __post_init__(self):
        if len(self.breakpoints) < 2 or len(self.slopes) != len(self.breakpoints) - 1:
            raise InvalidParameterError("need one slope per interval and at least one interval")
        if self.breakpoints[0] != 0:
            raise InvalidParameterError("the first breakpoint must be 0")
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            if not b > a:
                raise InvalidParameterError(f"breakpoints must increase, got {a} then {b}")

    @property
    def horizon(self) -> Number:
        return self.breakpoints[-1]

    def intervals(self):
        return zip(self.breakpoints, self.breakpoints[1:], self.slopes)

    def slope_at(self, tau) -> Number:
        for lo, hi, slope in self.intervals():
            if lo <= tau < hi:
                return slope
        return self.slopes[0] * 0

    def value(self, tau) -> Number:
        total = self.slopes[0] * 0
        for lo, hi, slope in self.intervals():
            if tau <= lo:
                break
            total += slope * (min(tau, hi) - lo)
        return total


def build_h(grid: TimeGrid, j: int) -> CameronMartinVector:
    """Dual vector h_j (1-based j): h_j(s_i) is the Kronecker delta."""
    if not 1 <= j <= grid.n:
        raise InvalidParameterError(f"index j={j} out of range 1..{grid.n}")
    inverse = invert_covariance(grid).entries
    column = j - 1
    slopes = []
    for k in range(grid.n):
        slopes.append(sum((inverse[i][column] for i in range(k, grid.n)), grid.zero()))
    breakpoints = (grid.zero(),) + grid.times
    if grid.horizon > grid.times[-1]:
        breakpoints += (grid.horizon,)
        slopes.append(grid.zero())
    return CameronMartinVector(breakpoints, tuple(slopes))


def indicator_vector(s, horizon) -> CameronMartinVector:
    """zeta_s with derivative 1 on [0, s) and 0 after, so zeta_s(tau) = s ^ tau."""
    zero = s * 0
    if horizon > s:
        return CameronMartinVector((zero, s, horizon), (zero + 1, zero))
    return CameronMartinVector((zero, s), (zero + 1,))


def inner_product(h: CameronMartinVector, g: CameronMartinVector) -> Number:
    """Integral of h' g' over the merged breakpoint partition."""
    points = sorted(set(h.breakpoints) | set(g.breakpoints))
    total = h.slopes[0] * 0
    for a, b in zip(points, points[1:]):
        total += h.slope_at(a) * g.slope_at(a) * (b - a)
    return total


# =============================================================================
# Polynomials
# =============================================================================

class GaussianPolynomial:
    """Sparse polynomial in the grid variables, keyed by exponent tuples."""

    def __init__(self, grid: TimeGrid, terms: Optional[Mapping[Exponents, Number]] = None):
        self.grid = grid
        self.terms: dict[Exponents, Number] = {}
        for exponents, coeff in (terms or {}).items():
            self.add_term(coeff, exponents)

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "GaussianPolynomial":
        return cls(grid, {(0,) * grid.n: value})

    @classmethod
    def variable(cls, grid: TimeGrid, index: int) -> "GaussianPolynomial":
        """W_{s_{index+1}} (0-based index)."""
        exponents = [0] * grid.n
        exponents[index] = 1
        return cls(grid, {tuple(exponents): 1})

    def add_term(self, coeff, exponents) -> None:
        exponents = tuple(int(e) for e in exponents)
        if len(exponents) != self.grid.n:
            raise GridMismatchError(f"exponent list {exponents} does not match grid size {self.grid.n}")
        if any(e < 0 for e in exponents):
            raise InvalidParameterError(f"negative exponent in {exponents}")
        total = self.terms.get(exponents, self.grid.zero()) + self.grid.coerce(coeff)
        if self._negligible(total):
            self.terms.pop(exponents, None)
        else:
            self.terms[exponents] = total

    def _negligible(self, coeff: Number) -> bool:
        if self.grid.exact:
            return coeff == 0
        return abs(coeff) < FLOAT_DROP

    def _check_grid(self, other: "GaussianPolynomial") -> None:
        if other.grid != self.grid:
            raise GridMismatchError("polynomials live on different grids")

    def copy(self) -> "GaussianPolynomial":
        return GaussianPolynomial(self.grid, self.terms)

    # ---- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, GaussianPolynomial):
            other = GaussianPolynomial.constant(self.grid, other)
        self._check_grid(other)
        result = self.copy()
        for exponents, coeff in other.terms.items():
            result.add_term(coeff, exponents)
        return result

    __radd__ = __add__

    def __neg__(self):
        return GaussianPolynomial(self.grid, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, GaussianPolynomial):
            factor = self.grid.coerce(other)
            return GaussianPolynomial(self.grid, {e: c * factor for e, c in self.terms.items()})
        self._check_grid(other)
        result = GaussianPolynomial(self.grid)
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                result.add_term(c1 * c2, tuple(a + b for a, b in zip(e1, e2)))
        return result

    __rmul__ = __mul__

    def __pow__(self, power: int):
        result = GaussianPolynomial.constant(self.grid, 1)
        for _ in range(power):
            result = result * self
        return result

    def __eq__(self, other):
        if not isinstance(other, GaussianPolynomial):
            return NotImplemented
        return self.grid == other.grid and self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for exponents, coeff in sorted(self.terms.items(), reverse=True):
            factors = [
                f"W{i + 1}" if e == 1 else f"W{i + 1}^{e}"
                for i, e in enumerate(exponents) if e
            ]
            parts.append("*".join([str(coeff)] + factors))
        return " + ".join(parts)

    # ---- structure ----------------------------------------------------------

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self.terms)

    def coefficient(self, exponents) -> Number:
        return self.terms.get(tuple(exponents), self.grid.zero())

    def partial(self, index: int) -> "GaussianPolynomial":
        """Derivative with respect to W_{s_{index+1}}."""
        result = GaussianPolynomial(self.grid)
        for exponents, coeff in self.terms.items():
            power = exponents[index]
            if power:
                lowered = list(exponents)
                lowered[index] -= 1
                result.add_term(coeff * power, lowered)
        return result

    def evaluate(self, y):
        """
        Polynomial value at y.

        Args:
            y: Length-n vector, or an array whose last axis has length n

        Returns:
            float for a single point, ndarray for a batch
        """
        points = np.asarray(y, dtype=float)
        if points.shape[-1:] != (self.grid.n,):
            raise GridMismatchError(f"point has shape {points.shape}, grid has {self.grid.n} variables")
        total = np.zeros(points.shape[:-1])
        for exponents, coeff in self.terms.items():
            term = np.full(points.shape[:-1], float(coeff))
            for i, power in enumerate(exponents):
                if power:
                    term = term * points[..., i] ** power
            total = total + term
        return float(total) if points.ndim == 1 else total


def directional_derivative(P: GaussianPolynomial, h: CameronMartinVector) -> GaussianPolynomial:
    """D_h P via D_h W_{s_i} = h(s_i)."""
    result = GaussianPolynomial(P.grid)
    for i, s in enumerate(P.grid.times):
        weight = h.value(s)
        if weight != 0:
            result = result + P.partial(i) * weight
    return result


def divergence_of(h: CameronMartinVector, grid: TimeGrid) -> GaussianPolynomial:
    """
    delta(h) as the Ito integral of the step function h'.

    Every interval with a nonzero slope must start and end at 0 or a grid time.
    """
    result = GaussianPolynomial(grid)
    for lo, hi, slope in h.intervals():
        if slope == 0:
            continue
        for endpoint, sign in ((hi, 1), (lo, -1)):
            if endpoint == 0:
                continue
            index = grid.index_of(endpoint)
            if index is None:
                raise BreakpointError(f"breakpoint {endpoint} is not a grid time")
            result = result + GaussianPolynomial.variable(grid, index) * (sign * slope)
    return result


def divergence_product(h: CameronMartinVector, P: GaussianPolynomial) -> GaussianPolynomial:
    """delta(h P) = delta(h) P - D_h P."""
    return divergence_of(h, P.grid) * P - directional_derivative(P, h)


def iterated_divergence(grid: TimeGrid) -> GaussianPolynomial:
    """Lambda = delta(h_n delta(h_{n-1} ... delta(h_2 delta(h_1))...))."""
    if grid.n > MAX_DIVERGENCE_POINTS:
        raise CapExceededError(f"iterated divergence is capped at n <= {MAX_DIVERGENCE_POINTS}, got {grid.n}")
    result = divergence_of(build_h(grid, 1), grid)
    for k in range(2, grid.n + 1):
        result = divergence_product(build_h(grid, k), result)
    logger.debug(f"Lambda on {grid.n} points: {len(result.terms)} terms")
    return result


def lambda_two_point(grid: TimeGrid) -> GaussianPolynomial:
    """Closed form of Lambda for n = 2 in terms of W_{s_1} and the increment."""
    if grid.n != 2:
        raise GridMismatchError("the two-point closed form needs a grid of size 2")
    s1, s2 = grid.times
    gap = s2 - s1
    w1 = GaussianPolynomial.variable(grid, 0)
    increment = GaussianPolynomial.variable(grid, 1) - w1
    return w1 * increment * (1 / (s1 * gap)) - (increment * increment - gap) * (1 / (gap * gap))


def _first_order_divergences(grid: TimeGrid) -> tuple[list[GaussianPolynomial], tuple]:
    """delta(h_j) = sum_i inverse[i][j] W_{s_i} for every j, with the inverse used."""
    inverse = invert_covariance(grid).entries
    variables = [GaussianPolynomial.variable(grid, i) for i in range(grid.n)]
    divergences = [
        sum((variables[i] * inverse[i][j] for i in range(grid.n)), GaussianPolynomial(grid))
        for j in range(grid.n)
    ]
    return divergences, inverse


def lambda_three_point(grid: TimeGrid) -> GaussianPolynomial:
    """
    Closed form of Lambda for n = 3.

    delta_1 delta_2 delta_3 minus inverse[a][b] delta_c for each pair {a, b}
    with c the remaining index (<h_a, h_b> is inverse[a][b]).
    """
    if grid.n != 3:
        raise GridMismatchError("the three-point closed form needs a grid of size 3")
    d, inverse = _first_order_divergences(grid)
    result = d[0] * d[1] * d[2]
    for a, b, c in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
        result = result - d[c] * inverse[a][b]
    return result


def uniform_contraction_three_point(grid: TimeGrid) -> GaussianPolynomial:
    """
    Three-point expression with every pair contracted as (s_i1 ^ s_i2) W_{s_i3}.

    Sum over i1, i2, i3 of inverse[i1][0] inverse[i2][1] inverse[i3][2] times
    (W_i1 W_i2 W_i3 - 3 (s_i1 ^ s_i2) W_i3). Its linear part is
    -3 inverse[0][1] delta_3, so it differs from Lambda on every grid:
    Lambda's linear part is -(inverse[0][1] delta_3 + inverse[1][2] delta_1).
    """
    if grid.n != 3:
        raise GridMismatchError("the three-point expression needs a grid of size 3")
    inverse = invert_covariance(grid).entries
    s = grid.times
    w = [GaussianPolynomial.variable(grid, i) for i in range(3)]
    result = GaussianPolynomial(grid)
    for i1, i2, i3 in product(range(3), repeat=3):
        weight = inverse[i1][0] * inverse[i2][1] * inverse[i3][2]
        if weight == 0:
            continue
        result = result + (w[i1] * w[i2] * w[i3] - w[i3] * (3 * min(s[i1], s[i2]))) * weight
    return result


def _partial_pairings(items: tuple) -> list[tuple[list, list]]:
    """All ways to pair off some of `items`: (pairs, unpaired) for each."""
    if not items:
        return [([], [])]
    first, rest = items[0], items[1:]
    result = [(pairs, [first] + single) for pairs, single in _partial_pairings(rest)]
    for k, partner in enumerate(rest):
        remaining = rest[:k] + rest[k + 1:]
        for pairs, single in _partial_pairings(remaining):
            result.append(([(first, partner)] + pairs, single))
    return result


def wick_divergence(grid: TimeGrid) -> GaussianPolynomial:
    """
    Lambda as the Wick product of delta(h_1), ..., delta(h_n).

    Sum over partial pairings of (-1)^pairs prod <h_a, h_b> prod delta(h_c);
    independent of the nested recursion in iterated_divergence.
    """
    if grid.n > MAX_DIVERGENCE_POINTS:
        raise CapExceededError(f"Wick expansion is capped at n <= {MAX_DIVERGENCE_POINTS}, got {grid.n}")
    vectors = [build_h(grid, j) for j in range(1, grid.n + 1)]
    first_order = [divergence_of(h, grid) for h in vectors]
    result = GaussianPolynomial(grid)
    for pairs, single in _partial_pairings(tuple(range(grid.n))):
        term = GaussianPolynomial.constant(grid, (-1) ** len(pairs))
        for a, b in pairs:
            term = term * inner_product(vectors[a], vectors[b])
        for c in single:
            term = term * first_order[c]
        result = result + term
    return result


def increment_coefficients(P: GaussianPolynomial) -> dict[Exponents, Number]:
    """Coefficients of P after substituting W_{s_i} = U_1 + ... + U_i."""
    grid = P.grid
    partial_sums = []
    running = GaussianPolynomial(grid)
    for i in range(grid.n):
        running = running + GaussianPolynomial.variable(grid, i)
        partial_sums.append(running)
    result = GaussianPolynomial(grid)
    for exponents, coeff in P.terms.items():
        term = GaussianPolynomial.constant(grid, coeff)
        for i, power in enumerate(exponents):
            if power:
                term = term * partial_sums[i] ** power
        result = result + term
    return dict(result.terms)


# =============================================================================
# Wick expectations
# =============================================================================

@lru_cache(maxsize=65536)
def _wick_moment(covariance: tuple, exponents: Exponents) -> Number:
    """E[prod W_i^{e_i}] by pairing the first variable with each remaining one."""
    unit = covariance[0][0] * 0 + 1
    if sum(exponents) == 0:
        return unit
    if sum(exponents) % 2:
        return unit * 0
    first = next(i for i, e in enumerate(exponents) if e)
    rest = list(exponents)
    rest[first] -= 1
    total = unit * 0
    for j, count in enumerate(rest):
        if count:
            reduced = list(rest)
            reduced[j] -= 1
            total += count * covariance[first][j] * _wick_moment(covariance, tuple(reduced))
    return total


def expectation(P: GaussianPolynomial) -> Number:
    """Exact expectation under the centered law with covariance min(s_i, s_j)."""
    if P.degree() > MAX_EXPECTATION_DEGREE:
        raise CapExceededError(f"expectation is capped at degree {MAX_EXPECTATION_DEGREE}, got {P.degree()}")
    if P.is_constant():
        return P.coefficient((0,) * P.grid.n)
    covariance = build_covariance(P.grid).entries
    total = P.grid.zero()
    for exponents, coeff in P.terms.items():
        if sum(exponents) % 2 == 0:
            total += coeff * _wick_moment(covariance, exponents)
    return total


# =============================================================================
# Non-integrability rate of the two-point divergence
# =============================================================================

def _folded_mean(mu: float, sigma: float) -> float:
    """E|mu + sigma X| for standard Gaussian X."""
    if sigma == 0:
        return abs(mu)
    ratio = mu / sigma
    return sigma * math.sqrt(2 / math.pi) * math.exp(-0.5 * ratio * ratio) + mu * (1 - 2 * stats.norm.cdf(-ratio))


def divergence_rate(s1: float, eps: float) -> float:
    """
    E|Lambda_{s1, s1+eps}| by conditioning on the normalized increment G.

    Lambda = (sqrt(eps/s1) X G - (G^2 - 1)) / eps with X, G independent.
    """
    if s1 <= 0 or eps <= 0:
        raise InvalidParameterError(f"need s1 > 0 and eps > 0, got {s1}, {eps}")
    scale = math.sqrt(eps / s1)

    def integrand(g: float) -> float:
        return stats.norm.pdf(g) * _folded_mean(-(g * g - 1), scale * abs(g))

    inner, _ = integrate.quad(integrand, 0.0, 1.0, limit=200, epsabs=1e-13)
    outer, _ = integrate.quad(integrand, 1.0, 12.0, limit=200, epsabs=1e-13)
    return 2 * (inner + outer) / eps


def divergence_rate_limit() -> float:
    """E|G^2 - 1| by quadrature (equals 4 q_1(1))."""
    def integrand(g: float) -> float:
        return abs(g * g - 1) * stats.norm.pdf(g)

    inner, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14)
    outer, _ = integrate.quad(integrand, 1.0, 12.0, epsabs=1e-14)
    return 2 * (inner + outer)


def random_grid(rng: np.random.Generator, n: int, low: float = 0.0, high: float = 1.0,
                min_gap: float = 0.0, horizon: Optional[float] = None) -> TimeGrid:
    """Sorted uniform draw of n points in (low, high) with all gaps >= min_gap."""
    while True:
        times = np.sort(rng.uniform(low, high, size=n))
        gaps = np.diff(np.concatenate(([0.0], times)))
        if times[0] > 0 and gaps.min() >= min_gap:
            return TimeGrid(tuple(float(s) for s in times), horizon=horizon)
