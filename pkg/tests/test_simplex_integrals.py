"""Tests for Wallis integrals, eta_n, simplex estimators and the empirical Davie constants."""

import math

import numpy as np
import pytest
from scipy import special

from malliavin_lab.services.drift_registry import get_drift
from malliavin_lab.services.gaussian_algebra import TimeGrid
from malliavin_lab.services.simplex_integrals import (
    a_alpha,
    ball_volume,
    ball_volume_closed,
    bound_In1,
    davie_bound,
    empirical_constant,
    estimate_In,
    estimate_term,
    eta,
    gauss_hermite_tensor,
    j6_bound,
    probe_davie,
    simplex_rule,
    simplex_time_integral,
    verify_ibp_pointwise,
    wallis,
)
from malliavin_lab.shared.errors import (
    CapExceededError,
    DerivativeUnavailableError,
    InvalidParameterError,
)


class TestWallis:
    """W(k), ball volumes and A(alpha)."""

    def test_first_values(self):
        assert wallis(0) == pytest.approx(math.pi / 2)
        assert wallis(1) == pytest.approx(1.0)
        assert wallis(2) == pytest.approx(math.pi / 4)
        assert wallis(3) == pytest.approx(2 / 3)

    def test_negative_index(self):
        with pytest.raises(InvalidParameterError):
            wallis(-1)

    def test_known_volumes(self):
        assert ball_volume(1) == pytest.approx(2.0)
        assert ball_volume(2) == pytest.approx(math.pi)
        assert ball_volume(3) == pytest.approx(4 * math.pi / 3)
        assert ball_volume(4) == pytest.approx(math.pi ** 2 / 2)

    def test_product_form_matches_closed_form(self):
        for n in range(1, 13):
            assert ball_volume(n) == pytest.approx(ball_volume_closed(n), rel=1e-12)

    def test_volume_bound(self):
        for n in range(1, 13):
            assert ball_volume(n) <= math.pi ** (n // 2) / math.factorial(n // 2) * (1 + 1e-12)

    def test_a_alpha_is_beta(self):
        for alpha in (0.0, 0.25, 0.5, 1.0, 1.7, 2.0):
            assert a_alpha(alpha) == pytest.approx(special.beta(0.5, alpha + 1), rel=1e-10)

    def test_a_zero(self):
        assert a_alpha(0.0) == pytest.approx(2.0)


class TestEta:
    """eta_n(t) = v_n t^(n/2)."""

    def test_closed_form(self):
        assert eta(2, 1.0).value == pytest.approx(math.pi)
        assert eta(4, 2.0).value == pytest.approx(math.pi ** 2 / 2 * 4)

    def test_quadrature_matches_closed_form(self):
        for t in (0.5, 1.0):
            for n in range(1, 7):
                quadrature = eta(n, t, method="quadrature").value
                assert quadrature == pytest.approx(eta(n, t).value, rel=1e-4)

    def test_invalid_inputs(self):
        with pytest.raises(InvalidParameterError):
            eta(0, 1.0)
        with pytest.raises(InvalidParameterError):
            eta(2, 1.0, method="series")

    def test_time_integral(self):
        assert simplex_time_integral(2, 2.0) == pytest.approx(math.pi * 4 / 2)


class TestBounds:

    def test_bound_in1(self):
        assert bound_In1(0, 1.0, 1.0) == 1.0
        assert bound_In1(2, 1.0, 1.0) == pytest.approx(4 * math.pi / math.e)
        assert bound_In1(3, 0.25, 2.0) == pytest.approx((2 * math.sqrt(math.pi / math.e)) ** 3 * 8 * 0.125)

    def test_davie_bound(self):
        assert davie_bound(4, 1.0, 1.0, 2.0) == pytest.approx(16 / 2)

    def test_davie_bound_needs_positive_m(self):
        with pytest.raises(InvalidParameterError):
            davie_bound(2, 1.0, 1.0, 0.0)

    def test_j6_bound(self):
        assert j6_bound(0.5, 2.0) == pytest.approx(8 * math.pi * 16 * 0.25, rel=1e-12)

    def test_empirical_constant_inverts_davie_form(self):
        n, t, M = 4, 0.5, 1.7
        value = davie_bound(n, t, 1.0, M)
        assert empirical_constant(value, n, t, 1.0) == pytest.approx(M)
        assert empirical_constant(value, n, t, 0.0) == 0.0


class TestQuadratureRules:

    def test_hermite_tensor_moments(self):
        points, weights = gauss_hermite_tensor(2, 10)
        assert weights.sum() == pytest.approx(1.0)
        assert (points[:, 0] ** 2) @ weights == pytest.approx(1.0)
        assert (points[:, 0] * points[:, 1]) @ weights == pytest.approx(0.0, abs=1e-14)

    def test_simplex_volume(self):
        _, weights = simplex_rule(2, 2.0, 6)
        assert weights.sum() == pytest.approx(2.0, rel=1e-12)
        _, weights = simplex_rule(3, 1.0, 4)
        assert weights.sum() == pytest.approx(1 / 6, rel=1e-12)

    def test_simplex_times_are_ordered(self):
        times, _ = simplex_rule(3, 1.0, 5)
        assert np.all(np.diff(times, axis=1) > 0)
        assert np.all((times > 0) & (times < 1))


class TestIn:
    """I_n(t) estimators."""

    def test_i1_sin_quadrature(self):
        value = estimate_In(get_drift("sin"), 1, 1.0).value
        assert value == pytest.approx(2 * (1 - math.exp(-0.5)), abs=1e-6)

    def test_i1_scales_with_amplitude(self):
        value = estimate_In(get_drift("sin", [3.0]), 1, 2.0).value
        assert value == pytest.approx(6 * (1 - math.exp(-1.0)), abs=1e-6)

    def test_i1_moment_paths(self):
        estimate = estimate_In(get_drift("sin"), 1, 1.0, method="moment_mc", paths=4000, steps=200,
                               seed=7, substreams=4, workers=1)
        assert estimate.method == "moment_mc"
        assert estimate.agrees_with(2 * (1 - math.exp(-0.5)), n_se=4, slack=1e-2)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_quadrature_and_path_moments_agree(self, n):
        spec = get_drift("sin")
        quadrature = estimate_In(spec, n, 1.0)
        moment = estimate_In(spec, n, 1.0, method="moment_mc", paths=4000, steps=500,
                             seed=11, substreams=4, workers=1)
        assert moment.std_error > 0
        assert moment.agrees_with(quadrature.value, n_se=4, slack=2e-3)

    def test_i2_within_bound(self):
        for name in ("sin", "cos", "scaled_tanh"):
            spec = get_drift(name)
            assert abs(estimate_In(spec, 2, 1.0).value) <= 8 * spec.bound ** 2

    def test_sign_needs_mollification(self):
        with pytest.raises(DerivativeUnavailableError):
            estimate_In(get_drift("sign"), 1, 1.0)

    def test_quadrature_order_limit(self):
        with pytest.raises(InvalidParameterError):
            estimate_In(get_drift("sin"), 4, 1.0)

    def test_unknown_method(self):
        with pytest.raises(InvalidParameterError):
            estimate_In(get_drift("sin"), 1, 1.0, method="spectral")

    def test_pointwise_integration_by_parts(self):
        for times in ((0.4,), (0.3, 0.7), (0.25, 0.5, 0.9)):
            assert verify_ibp_pointwise(TimeGrid(times), get_drift("sin")) < 1e-6


class TestKernelTerms:
    """Kernel-product terms over the simplex."""

    def test_single_factor_term(self):
        # integral over (0, t) of E[cos(W_s)] ds
        estimate = estimate_term((0,), get_drift("cos"), 1.0, samples=2000, seed=5, substreams=4, workers=1)
        assert estimate.agrees_with(2 * (1 - math.exp(-0.5)), n_se=4)

    def test_odd_term_vanishes_by_symmetry(self):
        estimate = estimate_term((1,), get_drift("cos"), 1.0, samples=200, seed=5, substreams=2, workers=1)
        assert estimate.value == pytest.approx(0.0, abs=1e-12)

    def test_invalid_orders(self):
        with pytest.raises(InvalidParameterError):
            estimate_term((0, 3), get_drift("sin"), 1.0, samples=10)
        with pytest.raises(CapExceededError):
            estimate_term((0, 0, 0, 0, 0), get_drift("sin"), 1.0, samples=10)


class TestDavieConstants:

    def test_cap(self):
        with pytest.raises(CapExceededError):
            probe_davie([get_drift("sin")], 7, 1.0)

    def test_entries(self):
        tables = probe_davie([get_drift("cos")], 4, 1.0, paths=2000, steps=100, seed=2, substreams=4, workers=1)
        assert len(tables) == 1
        table = tables[0]
        assert table.drift == "cos(1)"
        assert [entry.n for entry in table.entries] == [1, 2, 3, 4]
        assert table.m_max == max(entry.m_hat for entry in table.entries)
