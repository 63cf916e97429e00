"""Tests for the Gaussian algebra: grids, Cameron-Martin vectors, divergences, Wick moments."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from malliavin_lab.services.gaussian_algebra import (
    GaussianPolynomial,
    TimeGrid,
    build_covariance,
    build_h,
    dense_inverse,
    divergence_of,
    divergence_rate,
    divergence_rate_limit,
    expectation,
    increment_coefficients,
    indicator_vector,
    inner_product,
    invert_covariance,
    iterated_divergence,
    lambda_three_point,
    lambda_two_point,
    random_grid,
    uniform_contraction_three_point,
    wick_divergence,
)
from malliavin_lab.shared.errors import (
    BreakpointError,
    CapExceededError,
    DegenerateGridError,
    GridMismatchError,
    InvalidParameterError,
)


class TestTimeGrid:
    """Grid validation and increments."""

    def test_empty_grid_rejected(self):
        with pytest.raises(InvalidParameterError):
            TimeGrid(())

    def test_nonpositive_first_time_rejected(self):
        with pytest.raises(InvalidParameterError):
            TimeGrid((0.0, 1.0))

    def test_repeated_time_is_degenerate(self):
        with pytest.raises(DegenerateGridError):
            TimeGrid((0.5, 0.5))

    def test_decreasing_times_are_degenerate(self):
        with pytest.raises(DegenerateGridError):
            TimeGrid((0.7, 0.3))

    def test_horizon_before_last_time_rejected(self):
        with pytest.raises(InvalidParameterError):
            TimeGrid((0.5, 1.0), horizon=0.8)

    def test_exact_gaps(self):
        grid = TimeGrid((Fraction(1, 3), Fraction(1, 2), 2), exact=True)
        assert grid.gaps() == (Fraction(1, 3), Fraction(1, 6), Fraction(3, 2))

    def test_floats_become_exact_rationals(self):
        grid = TimeGrid((0.1, 0.25), exact=True)
        assert grid.times == (Fraction(1, 10), Fraction(1, 4))


class TestCovarianceInverse:
    """Closed-form tridiagonal inverse."""

    def test_exact_inverse_is_identity(self):
        grid = TimeGrid((Fraction(1, 3), Fraction(1, 2), 2, Fraction(7, 3)), exact=True)
        inverse = invert_covariance(grid).entries
        covariance = build_covariance(grid).entries
        n = grid.n
        for i in range(n):
            for j in range(n):
                value = sum(inverse[i][k] * covariance[k][j] for k in range(n))
                assert value == (1 if i == j else 0)

    def test_two_point_inverse(self):
        grid = TimeGrid((1, 2), exact=True)
        assert invert_covariance(grid).entries == ((2, -1), (-1, 1))

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(5)
        for n in range(1, 9):
            grid = random_grid(rng, n, min_gap=0.01)
            closed = invert_covariance(grid).to_numpy()
            assert np.allclose(closed, dense_inverse(grid), rtol=1e-10, atol=1e-8)


class TestCameronMartin:
    """Dual vectors h_j and the indicator vectors."""

    def test_dual_property(self):
        grid = TimeGrid((Fraction(1, 4), Fraction(1, 2), 1), exact=True)
        for j in range(1, 4):
            h = build_h(grid, j)
            for i, s in enumerate(grid.times):
                assert h.value(s) == (1 if i == j - 1 else 0)

    def test_inner_products_are_inverse_entries(self):
        grid = TimeGrid((1, 2, 3), exact=True)
        inverse = invert_covariance(grid).entries
        vectors = [build_h(grid, j) for j in (1, 2, 3)]
        for a in range(3):
            for b in range(3):
                assert inner_product(vectors[a], vectors[b]) == inverse[a][b]

    def test_horizon_beyond_grid_adds_flat_piece(self):
        grid = TimeGrid((1, 2), horizon=3, exact=True)
        h = build_h(grid, 2)
        assert h.horizon == 3
        assert h.slope_at(Fraction(5, 2)) == 0
        assert h.value(3) == h.value(2) == 1

    def test_indicator_vector(self):
        zeta = indicator_vector(Fraction(1, 2), 1)
        assert zeta.value(Fraction(1, 4)) == Fraction(1, 4)
        assert zeta.value(1) == Fraction(1, 2)

    def test_index_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            build_h(TimeGrid((1, 2)), 3)


class TestIteratedDivergence:
    """Lambda against closed forms and independent expansions."""

    def test_two_point_grid_closed_form(self):
        grid = TimeGrid((1, 2), exact=True)
        w1 = GaussianPolynomial.variable(grid, 0)
        w2 = GaussianPolynomial.variable(grid, 1)
        expected = -2 * w1 * w1 + 3 * w1 * w2 - w2 * w2 + 1
        assert iterated_divergence(grid) == expected

    def test_single_point(self):
        grid = TimeGrid((Fraction(1, 2),), exact=True)
        assert iterated_divergence(grid) == GaussianPolynomial.variable(grid, 0) * 2

    def test_two_point_increment_form(self):
        for times in ((Fraction(1, 3), Fraction(1, 2)), (Fraction(1, 10), Fraction(7, 10)), (2, 5)):
            grid = TimeGrid(times, exact=True)
            assert iterated_divergence(grid) == lambda_two_point(grid)

    def test_three_point_contractions(self):
        grid = TimeGrid((Fraction(1, 5), Fraction(1, 3), Fraction(7, 8)), exact=True)
        h = [build_h(grid, j) for j in (1, 2, 3)]
        d = [divergence_of(v, grid) for v in h]
        expected = (
            d[0] * d[1] * d[2]
            - d[2] * inner_product(h[0], h[1])
            - d[1] * inner_product(h[0], h[2])
            - d[0] * inner_product(h[1], h[2])
        )
        assert iterated_divergence(grid) == expected

    def test_three_point_pair_form(self):
        for times in ((1, 2, 3), (Fraction(1, 4), Fraction(1, 2), 1), (Fraction(1, 5), Fraction(1, 3), Fraction(7, 8))):
            grid = TimeGrid(times, exact=True)
            assert iterated_divergence(grid) == lambda_three_point(grid)

    def test_uniform_contraction_is_not_lambda(self):
        grid = TimeGrid((1, 2, 3), exact=True)
        nested = iterated_divergence(grid)
        uniform = uniform_contraction_three_point(grid)
        assert _degree_part(nested, 3) == _degree_part(uniform, 3)
        assert _degree_part(nested, 1) == {(1, 0, 0): 2, (0, 1, 0): -2, (0, 0, 1): 1}
        assert _degree_part(uniform, 1) == {(0, 1, 0): -3, (0, 0, 1): 3}

    def test_uniform_contraction_differs_off_integer_grid(self):
        grid = TimeGrid((Fraction(1, 5), Fraction(1, 3), Fraction(7, 8)), exact=True)
        assert uniform_contraction_three_point(grid) != iterated_divergence(grid)

    def test_three_point_forms_need_three_points(self):
        grid = TimeGrid((1, 2), exact=True)
        with pytest.raises(GridMismatchError):
            lambda_three_point(grid)
        with pytest.raises(GridMismatchError):
            uniform_contraction_three_point(grid)

    def test_two_point_increment_coefficients(self):
        for s1, s2 in ((1, 2), (Fraction(1, 3), Fraction(1, 2)), (Fraction(1, 10), Fraction(7, 10))):
            gap = Fraction(s2) - Fraction(s1)
            coeffs = increment_coefficients(iterated_divergence(TimeGrid((s1, s2), exact=True)))
            assert coeffs.get((2, 0), 0) == 0
            assert coeffs[(1, 1)] == 1 / (s1 * gap)
            assert coeffs[(0, 2)] == -1 / gap ** 2
            assert coeffs[(0, 0)] == 1 / gap
            assert coeffs.get((1, 0), 0) == 0 and coeffs.get((0, 1), 0) == 0

    def test_matches_wick_expansion(self):
        for times in ((1, 2, 3), (Fraction(1, 4), Fraction(1, 2), 1, Fraction(3, 2))):
            grid = TimeGrid(times, exact=True)
            assert iterated_divergence(grid) == wick_divergence(grid)

    def test_mean_zero(self):
        for n in range(1, 5):
            grid = TimeGrid(tuple(Fraction(k, n + 1) for k in range(1, n + 1)), exact=True)
            assert expectation(iterated_divergence(grid)) == 0

    def test_degree_is_n(self):
        grid = TimeGrid((1, 2, 3, 4), exact=True)
        assert iterated_divergence(grid).degree() == 4

    def test_cap(self):
        with pytest.raises(CapExceededError):
            iterated_divergence(TimeGrid(tuple(range(1, 10))))

    def test_breakpoint_off_grid(self):
        grid = TimeGrid((1, 2), exact=True)
        with pytest.raises(BreakpointError):
            divergence_of(indicator_vector(Fraction(3, 2), 2), grid)


class TestPolynomials:
    """Sparse polynomial arithmetic and evaluation."""

    def test_zero_coefficients_dropped(self):
        grid = TimeGrid((1, 2), exact=True)
        w1 = GaussianPolynomial.variable(grid, 0)
        assert (w1 - w1).terms == {}

    def test_evaluate_single_and_batch(self):
        grid = TimeGrid((1.0, 2.0))
        poly = GaussianPolynomial.variable(grid, 0) * GaussianPolynomial.variable(grid, 1) + 1
        assert poly.evaluate([2.0, 3.0]) == pytest.approx(7.0)
        batch = poly.evaluate(np.array([[1.0, 1.0], [0.0, 5.0]]))
        assert batch == pytest.approx([2.0, 1.0])

    def test_evaluate_wrong_length(self):
        grid = TimeGrid((1.0, 2.0))
        with pytest.raises(GridMismatchError):
            GaussianPolynomial.variable(grid, 0).evaluate([1.0, 2.0, 3.0])

    def test_grids_must_match(self):
        a = GaussianPolynomial.variable(TimeGrid((1.0, 2.0)), 0)
        b = GaussianPolynomial.variable(TimeGrid((1.0, 3.0)), 0)
        with pytest.raises(GridMismatchError):
            a + b

    def test_partial_derivative(self):
        grid = TimeGrid((1, 2), exact=True)
        w1 = GaussianPolynomial.variable(grid, 0)
        w2 = GaussianPolynomial.variable(grid, 1)
        assert (w1 ** 3 * w2).partial(0) == 3 * w1 ** 2 * w2

    def test_increment_coefficients(self):
        grid = TimeGrid((1, 2), exact=True)
        w2 = GaussianPolynomial.variable(grid, 1)
        assert increment_coefficients(w2) == {(1, 0): 1, (0, 1): 1}
        assert increment_coefficients(w2 * w2) == {(2, 0): 1, (1, 1): 2, (0, 2): 1}


class TestWickMoments:
    """Isserlis expectations with covariance min(s_i, s_j)."""

    def test_fourth_moment(self):
        grid = TimeGrid((1, 2), exact=True)
        w1 = GaussianPolynomial.variable(grid, 0)
        w2 = GaussianPolynomial.variable(grid, 1)
        assert expectation(w1 ** 2 * w2 ** 2) == 4
        assert expectation(w2 ** 4) == 12

    def test_constant_expectation(self):
        grid = TimeGrid((1, 2), exact=True)
        assert expectation(GaussianPolynomial.constant(grid, Fraction(5, 3))) == Fraction(5, 3)
        assert expectation(GaussianPolynomial(grid)) == 0

    def test_odd_moment_vanishes(self):
        grid = TimeGrid((1, 2), exact=True)
        w1 = GaussianPolynomial.variable(grid, 0)
        assert expectation(w1 ** 3) == 0

    def test_degree_cap(self):
        grid = TimeGrid((1.0,))
        with pytest.raises(CapExceededError):
            expectation(GaussianPolynomial.variable(grid, 0) ** 18)


class TestDivergenceRate:
    """E|Lambda_{s, s+eps}| blows up like E|G^2 - 1| / eps."""

    def test_limit_constant(self):
        expected = 4 * math.exp(-0.5) / math.sqrt(2 * math.pi)
        assert divergence_rate_limit() == pytest.approx(expected, rel=1e-9)

    def test_scaled_rate_approaches_limit(self):
        eps = 1e-3
        assert eps * divergence_rate(0.5, eps) == pytest.approx(divergence_rate_limit(), rel=0.01)

    def test_loglog_slope(self):
        eps = np.array([1e-1, 1e-2, 1e-3])
        rates = [divergence_rate(0.5, e) for e in eps]
        slope = np.polyfit(np.log(eps), np.log(rates), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)

    def test_invalid_arguments(self):
        with pytest.raises(InvalidParameterError):
            divergence_rate(0.5, 0.0)


@st.composite
def _float_grids(draw):
    times = sorted(draw(st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3, unique=True)))
    gaps = np.diff([0.0] + times)
    assume(gaps.min() >= 0.02)
    return TimeGrid(tuple(times))


class TestFloatProperties:
    """Float-mode identities on random grids."""

    @settings(max_examples=30, deadline=None)
    @given(_float_grids())
    def test_wick_expansion_agrees(self, grid):
        nested = iterated_divergence(grid)
        wick = wick_divergence(grid)
        for exponents in set(nested.terms) | set(wick.terms):
            assert nested.coefficient(exponents) == pytest.approx(wick.coefficient(exponents), rel=1e-9, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(_float_grids())
    def test_mean_zero(self, grid):
        assert expectation(iterated_divergence(grid)) == pytest.approx(0.0, abs=1e-6)


@st.composite
def _exact_products(draw):
    n = draw(st.integers(1, 4))
    quarters = sorted(draw(st.lists(st.integers(1, 12), min_size=n, max_size=n, unique=True)))
    grid = TimeGrid(tuple(Fraction(k, 4) for k in quarters), exact=True)
    coefficients = [draw(st.lists(st.integers(-3, 3), min_size=4, max_size=4)) for _ in range(n)]
    return grid, coefficients


class TestIntegrationByParts:
    """E[d^n Phi(W)] = E[Phi(W) Lambda] exactly for product polynomials."""

    @settings(max_examples=15, deadline=None)
    @given(_exact_products())
    def test_symbolic_identity(self, case):
        grid, coefficients = case
        phi = GaussianPolynomial.constant(grid, 1)
        for i, coeffs in enumerate(coefficients):
            phi = phi * _univariate(grid, i, coeffs)
        derivative = phi
        for i in range(grid.n):
            derivative = derivative.partial(i)
        assert expectation(derivative) == expectation(phi * iterated_divergence(grid))

    def test_single_point_is_stein_identity(self):
        grid = TimeGrid((Fraction(3, 4),), exact=True)
        w = GaussianPolynomial.variable(grid, 0)
        phi = w ** 3 - 2 * w
        assert expectation(phi.partial(0)) == expectation(phi * wick_divergence(grid))
        assert expectation(phi.partial(0)) == Fraction(1, 4)


def _univariate(grid, index, coeffs):
    w = GaussianPolynomial.variable(grid, index)
    return sum((c * w ** k for k, c in enumerate(coeffs)), GaussianPolynomial(grid))


def _degree_part(poly, degree):
    return {e: c for e, c in poly.terms.items() if sum(e) == degree}
