"""Tests for Euler-Maruyama paths, flow derivatives and the flow ensembles."""

import math

import numpy as np
import pytest

from malliavin_lab.services.drift_registry import get_drift
from malliavin_lab.services.gaussian_algebra import CameronMartinVector, indicator_vector
from malliavin_lab.services.sde_flow import (
    averaged_mollified_flow,
    endpoint_mean,
    exp_moment_check,
    flow_cocycle_residual,
    flow_derivative,
    flow_finite_difference,
    girsanov_check,
    girsanov_weight,
    gradient_norm,
    gradient_norm_moments,
    increment_factorization_residual,
    malliavin_derivative_path,
    moment_bound_value,
    series_half_factorial,
    simulate_path,
    sobolev_norm_estimate,
    step_count,
    time_continuity_check,
    transition_derivative,
    wiener_shift_derivative,
)
from malliavin_lab.shared.errors import (
    BreakpointError,
    DerivativeUnavailableError,
    InvalidParameterError,
    StepConfigurationError,
)


class TestStepCount:

    def test_whole_steps(self):
        assert step_count(1.0, 1e-3) == 1000
        assert step_count(0.3, 0.1) == 3

    def test_step_must_divide_horizon(self):
        with pytest.raises(StepConfigurationError):
            step_count(1.0, 0.3)

    def test_nonpositive_step(self):
        with pytest.raises(StepConfigurationError):
            step_count(1.0, 0.0)


class TestSimulation:
    """Euler-Maruyama scheme on seeded noise."""

    def test_zero_drift_reproduces_brownian_motion(self):
        path = simulate_path(get_drift("zero"), 0.5, 1.0, 0.01, seed=3)
        assert np.array_equal(path.states, 0.5 + path.wiener)
        assert path.steps == 100
        assert path.horizon == pytest.approx(1.0)

    def test_constant_drift(self):
        path = simulate_path(get_drift("const", [2.0]), 0.0, 1.0, 0.01, seed=3)
        assert path.states[-1] == pytest.approx(path.wiener[-1] + 2.0, abs=1e-12)

    def test_same_seed_same_path(self):
        first = simulate_path(get_drift("sin"), 0.1, 0.5, 0.01, seed=9, substream=2)
        second = simulate_path(get_drift("sin"), 0.1, 0.5, 0.01, seed=9, substream=2)
        assert np.array_equal(first.states, second.states)

    def test_substreams_differ(self):
        first = simulate_path(get_drift("zero"), 0.0, 0.5, 0.01, seed=9, substream=0)
        second = simulate_path(get_drift("zero"), 0.0, 0.5, 0.01, seed=9, substream=1)
        assert not np.array_equal(first.noise, second.noise)


class TestFlowDerivative:
    """X'_t, transition derivatives and the cocycle."""

    def test_linear_drift(self):
        path = simulate_path(get_drift("linear_test"), 0.3, 1.0, 1e-3, seed=1)
        assert flow_derivative(path, get_drift("linear_test")) == pytest.approx(math.exp(-1), rel=1e-12)

    def test_finite_difference_agrees(self):
        spec = get_drift("sin")
        path = simulate_path(spec, 0.2, 1.0, 1e-4, seed=4)
        fd = flow_finite_difference(spec, 0.2, path.noise, 1e-4)
        assert fd == pytest.approx(flow_derivative(path, spec), rel=1e-3)

    def test_linear_finite_difference_is_euler_product(self):
        spec = get_drift("linear_test")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=4)
        fd = flow_finite_difference(spec, 0.0, path.noise, 1e-3)
        assert fd == pytest.approx((1 - 1e-3) ** 1000, rel=1e-9)

    def test_sign_needs_mollification(self):
        spec = get_drift("sign")
        path = simulate_path(spec, 0.0, 0.1, 0.01, seed=1)
        with pytest.raises(DerivativeUnavailableError):
            flow_derivative(path, spec)

    def test_cocycle(self):
        spec = get_drift("sin")
        path = simulate_path(spec, 0.4, 1.0, 1e-3, seed=6)
        assert flow_cocycle_residual(path, spec, 0.2, 0.5, 0.9) < 1e-12
        assert increment_factorization_residual(path, spec, 0.3, 1.0) < 1e-12

    def test_transition_from_zero_is_flow_derivative(self):
        spec = get_drift("cos")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=6)
        assert transition_derivative(path, spec, 0.0, 1.0) == pytest.approx(flow_derivative(path, spec))

    def test_time_off_grid(self):
        spec = get_drift("sin")
        path = simulate_path(spec, 0.0, 1.0, 0.01, seed=6)
        with pytest.raises(StepConfigurationError):
            transition_derivative(path, spec, 0.005, 1.0)


class TestMalliavinDerivative:
    """Duhamel formula against closed forms and Wiener shifts."""

    def test_linear_drift_closed_form(self):
        spec = get_drift("linear_test")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=2)
        h = indicator_vector(1.0, 1.0)
        assert malliavin_derivative_path(path, spec, h) == pytest.approx(1 - math.exp(-1), abs=1e-6)

    def test_zero_drift_gives_h(self):
        spec = get_drift("zero")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=2)
        h = CameronMartinVector((0.0, 0.2, 0.6, 1.0), (1.5, -2.0, 0.5))
        assert malliavin_derivative_path(path, spec, h) == pytest.approx(h.value(1.0), abs=1e-10)

    def test_wiener_shift_agrees(self):
        spec = get_drift("sin")
        path = simulate_path(spec, 0.3, 1.0, 1e-3, seed=8)
        h = indicator_vector(0.5, 1.0)
        duhamel = malliavin_derivative_path(path, spec, h)
        shifted = wiener_shift_derivative(path, spec, h)
        assert shifted == pytest.approx(duhamel, rel=1e-2, abs=1e-2)

    def test_breakpoint_off_grid(self):
        spec = get_drift("sin")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=8)
        with pytest.raises(BreakpointError):
            malliavin_derivative_path(path, spec, indicator_vector(0.5005, 1.0))


class TestGradientNorm:

    def test_zero_drift(self):
        path = simulate_path(get_drift("zero"), 0.0, 1.0, 1e-3, seed=1)
        assert gradient_norm(path, get_drift("zero")) == pytest.approx(1.0)
        assert gradient_norm(path, get_drift("zero"), t=0.25) == pytest.approx(0.5)

    def test_linear_drift(self):
        spec = get_drift("linear_test")
        path = simulate_path(spec, 0.0, 1.0, 1e-3, seed=1)
        assert gradient_norm(path, spec) == pytest.approx(math.sqrt((1 - math.exp(-2)) / 2), abs=1e-6)

    def test_moments_for_linear_drift_are_deterministic(self):
        estimates = gradient_norm_moments(get_drift("linear_test"), 1.0, 1e-3, paths=20, seed=1,
                                          substreams=2, workers=1)
        assert set(estimates) == {2, 4}
        assert estimates[2].value == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-6)
        assert estimates[4].value == pytest.approx(((1 - math.exp(-2)) / 2) ** 2, rel=1e-6)


class TestClosedForms:

    def test_half_factorial_series(self):
        for x in (0.0, 0.5, 1.0, 2.0):
            partial_sum, closed = series_half_factorial(x)
            assert partial_sum == pytest.approx(closed, rel=1e-10)

    def test_series_needs_nonnegative_x(self):
        with pytest.raises(InvalidParameterError):
            series_half_factorial(-0.5)

    def test_moment_bound(self):
        assert moment_bound_value(2, 1.0, 1.0, 1.0, 1.0) == pytest.approx(5 * math.exp(9), rel=1e-12)

    def test_moment_bound_needs_positive_m(self):
        with pytest.raises(InvalidParameterError):
            moment_bound_value(2, 1.0, 1.0, 1.0, 0.0)


class TestEnsembles:
    """Small seeded ensembles of the flow experiments."""

    def test_endpoint_mean_zero_drift(self):
        estimate = endpoint_mean(get_drift("zero"), 0.3, 1.0, 0.05, paths=2000, seed=4, substreams=4, workers=1)
        assert estimate.count == 2000
        assert estimate.agrees_with(0.3, n_se=4)

    def test_worker_count_does_not_change_result(self):
        spec = get_drift("sin")
        serial = endpoint_mean(spec, 0.0, 0.5, 0.05, paths=400, seed=12, substreams=4, workers=1)
        parallel = endpoint_mean(spec, 0.0, 0.5, 0.05, paths=400, seed=12, substreams=4, workers=2)
        assert serial.value == parallel.value
        assert serial.std_error == parallel.std_error

    def test_girsanov_zero_drift_is_exact(self):
        estimates = girsanov_check(get_drift("zero"), 0.3, 1.0, 0.05, paths=100, seed=1, substreams=2, workers=1)
        assert estimates["weight"].value == pytest.approx(1.0)
        assert estimates["weight"].std_error == pytest.approx(0.0, abs=1e-15)

    def test_girsanov_targets(self):
        estimates = girsanov_check(get_drift("cos"), 0.3, 1.0, 0.01, paths=4000, seed=1, substreams=4, workers=1)
        assert estimates["weight"].agrees_with(1.0, n_se=4)
        assert estimates["weighted_square"].agrees_with(0.3 ** 2 + 1.0, n_se=4)

    def test_exp_moment_domination(self):
        report = exp_moment_check(get_drift("sin"), 2, 1.0, 1.0, 0.01, paths=2000, seed=3, substreams=4, workers=1)
        assert report.passed
        assert report.lhs.value > 0

    def test_exp_moment_zero_drift_is_trivial(self):
        report = exp_moment_check(get_drift("zero"), 2, 1.0, 1.0, 0.01, paths=200, seed=3, substreams=2, workers=1)
        assert report.lhs.value == pytest.approx(1.0)
        assert report.rhs == pytest.approx(1.0)
        assert report.passed

    def test_exp_moment_constant_drift_keeps_gaussian_factor(self):
        report = exp_moment_check(get_drift("const", [1.5]), 2, 0.5, 1.0, 0.01, paths=200, seed=3,
                                  substreams=2, workers=1)
        assert report.lhs.value == pytest.approx(1.0)
        assert report.rhs == pytest.approx(math.exp(1.5 ** 2 / 2))
        assert report.passed

    def test_exp_moment_needs_t_within_horizon(self):
        with pytest.raises(InvalidParameterError):
            exp_moment_check(get_drift("sin"), 2, 2.0, 1.0, 0.01, paths=10, seed=3)

    def test_sobolev_zero_drift_derivative_part(self):
        # X'_t = 1 everywhere, so the derivative part is the lattice length 2R
        estimate = sobolev_norm_estimate(get_drift("zero"), 1.0, 1.5, 2, 11, paths=20, dt=0.1, seed=1,
                                         part="derivative", substreams=2, workers=1)
        assert estimate.value == pytest.approx(3.0)

    def test_sobolev_unknown_part(self):
        with pytest.raises(InvalidParameterError):
            sobolev_norm_estimate(get_drift("sin"), 1.0, 1.0, 2, 11, paths=10, dt=0.1, seed=1, part="energy")

    def test_time_continuity_needs_q_above_two(self):
        with pytest.raises(InvalidParameterError):
            time_continuity_check(get_drift("sin"), q=2.0)

    def test_time_continuity_zero_drift(self):
        report = time_continuity_check(get_drift("zero"), q=4, p=4, resolution=5, paths=4000, dt=0.01,
                                       gaps=(0.04, 0.16, 0.64), seed=2, substreams=4, workers=1)
        assert report.target == 2.0
        assert len(report.estimates) == 3
        assert report.slope == pytest.approx(2.0, abs=0.15)
        assert report.passed

    def test_time_continuity_sin(self):
        report = time_continuity_check(get_drift("sin"), q=4, p=4, resolution=5, paths=2000, dt=0.01,
                                       gaps=(0.04, 0.16, 0.64), seed=2, substreams=4, workers=1)
        assert all(e.value > 0 for e in report.estimates)
        assert report.passed

    def test_time_continuity_stable_under_step_halving(self):
        options = dict(q=4, p=4, resolution=5, paths=2000, gaps=(0.04, 0.16, 0.64), seed=2, substreams=4, workers=1)
        coarse = time_continuity_check(get_drift("sin"), dt=0.02, **options)
        fine = time_continuity_check(get_drift("sin"), dt=0.01, **options)
        assert coarse.passed and fine.passed
        assert abs(coarse.slope - fine.slope) <= 0.15 * fine.target


class TestMollifiedFlow:

    def test_running_means(self):
        flow = averaged_mollified_flow(get_drift("sign"), [4, 8], x0=0.5, t=0.5, dt=0.01, seed=1)
        assert flow.levels == [4, 8]
        assert flow.mean_endpoints[0] == flow.endpoints[0]
        assert flow.mean_derivatives[1] == pytest.approx(np.mean(flow.derivatives))
        assert all(d > 0 for d in flow.derivatives)
