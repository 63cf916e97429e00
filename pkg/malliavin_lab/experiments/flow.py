"""
Flow experiments - Euler-Maruyama paths, Girsanov weights, exponential moments,
flow and Malliavin derivatives, Sobolev norms and time continuity.
"""

import logging
import math

import numpy as np

from malliavin_lab.config import get_config
from malliavin_lab.reporting.csv_report import ReportRow, make_row
from malliavin_lab.reporting.experiment_config import ExperimentConfig
from malliavin_lab.experiments.common import ensemble_options, single_drift
from malliavin_lab.services.drift_registry import check_bound, eval_b, get_drift, mollify
from malliavin_lab.services.gaussian_algebra import TimeGrid, build_h, indicator_vector
from malliavin_lab.services.sde_flow import (
    averaged_mollified_flow,
    endpoint_mean,
    exp_moment_check,
    flow_cocycle_residual,
    flow_derivative,
    flow_finite_difference,
    girsanov_check,
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
    wiener_shift_derivative,
)
from malliavin_lab.shared.ensemble import substream_rng

logger = logging.getLogger(__name__)

SERIES_POINTS = (0.5, 1.0, 2.0)
SERIES_TOLERANCE = 1e-10
FD_RTOL = 1e-3
SHIFT_RTOL = 1e-2
SHIFT_FLOOR = 1e-2
MOLLIFICATION_LEVELS = (4, 16, 64)
DIAGNOSTIC_LEVELS = (1, 2, 4, 8, 16, 32, 64)
UNIFORMITY_RATIO = 1.5
DT_STABILITY_SLACK = 0.02
PATH_TOLERANCE = 1e-10
QUADRATURE_SLACK = 1e-6


FLOW_EXPERIMENTS = [
    {
        "name": "euler_convergence",
        "description": "E[X_t] at dt and 10 dt agree within 3 combined SE plus 10 dt",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.0, "paths": 100_000},
    },
    {
        "name": "girsanov",
        "description": "E[N_t] = 1 and E[X_t^2 N_t] = x0^2 + t",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.3, "paths": 100_000},
    },
    {
        "name": "exp_moment",
        "description": "E[exp(p int b'(X))] <= exp(|b|^2 T / 2) sqrt(E[exp(2p int b'(W))])",
        "defaults": {"p": 2.0, "t": 1.0, "T": 1.0, "dt": 1e-3, "x0": 0.0, "paths": 100_000},
    },
    {
        "name": "half_factorial_series",
        "description": "Partial sums of x^n / floor(n/2)! reach (1 + x) exp(x^2)",
        "defaults": {"n": 120},
    },
    {
        "name": "flow_derivative",
        "description": "X'_t in closed form and against common-noise finite differences",
        "defaults": {"t": 1.0, "dt": 1e-4, "x0": 0.0, "trials": 5},
    },
    {
        "name": "duhamel",
        "description": "D_h X_t by the Duhamel formula: closed form and Wiener-shift differences",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.0, "trials": 200},
    },
    {
        "name": "gradient_norm",
        "description": "|grad X_t| closed forms and dt-stable ensemble moments",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.0, "paths": 20_000},
    },
    {
        "name": "sobolev_uniformity",
        "description": "E[int |X_t|^p + |X_t'|^p] bounded across mollification levels",
        "defaults": {"t": 1.0, "dt": 1e-3, "R": 1.0, "p": 1.0, "n": 21, "paths": 2000},
    },
    {
        "name": "time_continuity",
        "description": "Log-log exponent of E[|X_{t+g} - X_t|^q] in the gap g",
        "defaults": {"t": 0.1, "dt": 1e-3, "R": 1.0, "p": 4.0, "q": 4.0, "n": 21, "paths": 4000},
    },
    {
        "name": "mollification_check",
        "description": "Mollified drifts keep the sup bound and match b away from jumps; averaged flows",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.0},
    },
    {
        "name": "moment_bound",
        "description": "E[X'_t^p] against the moment bound for the configured Davie constant",
        "defaults": {"p": 2.0, "t": 1.0, "T": 1.0, "dt": 1e-3, "x0": 0.0, "paths": 100_000},
    },
    {
        "name": "flow_cocycle",
        "description": "X'_{t,s} X'_{s,r} = X'_{t,r} and increment factorization along paths",
        "defaults": {"t": 1.0, "dt": 1e-3, "x0": 0.0, "trials": 20},
    },
]


def _euler_convergence(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "sin")
    options = ensemble_options(cfg)
    coarse_dt = 10 * cfg.dt
    coarse = endpoint_mean(spec, cfg.x0, cfg.t, coarse_dt, cfg.paths, cfg.seed, **options)
    fine = endpoint_mean(spec, cfg.x0, cfg.t, cfg.dt, cfg.paths, cfg.seed, **options)
    tolerance = 3 * coarse.combined_se(fine) + coarse_dt
    params = {"drift": spec.label, "t": cfg.t, "x0": cfg.x0, "paths": cfg.paths}
    return [
        make_row(name, {**params, "dt": coarse_dt}, coarse.value, std_error=coarse.std_error, seed=cfg.seed),
        make_row(name, {**params, "dt": cfg.dt}, fine.value, std_error=fine.std_error, seed=cfg.seed),
        make_row(name, {**params, "check": "difference"}, abs(coarse.value - fine.value),
                 std_error=coarse.combined_se(fine), tolerance=tolerance,
                 passed=abs(coarse.value - fine.value) <= tolerance, seed=cfg.seed),
    ]


def _girsanov(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "cos")
    estimates = girsanov_check(spec, cfg.x0, cfg.t, cfg.dt, cfg.paths, cfg.seed, **ensemble_options(cfg))
    params = {"drift": spec.label, "t": cfg.t, "x0": cfg.x0, "paths": cfg.paths}
    rows = []
    for statistic, target in (("weight", 1.0), ("weighted_square", cfg.x0 ** 2 + cfg.t)):
        estimate = estimates[statistic]
        rows.append(make_row(name, {**params, "statistic": statistic, "target": target}, estimate.value,
                             std_error=estimate.std_error, tolerance=3 * estimate.std_error,
                             passed=estimate.agrees_with(target), seed=cfg.seed))
    return rows


def _exp_moment(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "sin")
    report = exp_moment_check(spec, cfg.p, cfg.t, cfg.T, cfg.dt, cfg.paths, cfg.seed, x0=cfg.x0,
                              **ensemble_options(cfg))
    params = {"drift": spec.label, "p": cfg.p, "t": cfg.t, "T": cfg.T, "paths": cfg.paths}
    return [
        make_row(name, {**params, "side": "rhs"}, report.rhs, std_error=report.rhs_std_error, seed=cfg.seed),
        make_row(name, {**params, "side": "lhs", "rhs": report.rhs}, report.lhs.value,
                 std_error=report.lhs.std_error, tolerance=report.margin, passed=report.passed, seed=cfg.seed),
    ]


def _series(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    rows = []
    for x in SERIES_POINTS:
        partial_sum, closed = series_half_factorial(x, terms=cfg.n)
        gap = abs(partial_sum - closed)
        tolerance = SERIES_TOLERANCE * max(1.0, closed)
        rows.append(make_row(name, {"x": x, "terms": cfg.n, "closed": closed}, partial_sum,
                             tolerance=tolerance, passed=gap <= tolerance))
    return rows


def _flow_derivative(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    linear = get_drift("linear_test")
    path = simulate_path(linear, cfg.x0, cfg.t, cfg.dt, cfg.seed)
    target = math.exp(linear.params[0] * cfg.t)
    value = flow_derivative(path, linear)
    rows = [make_row(name, {"drift": linear.label, "t": cfg.t, "dt": cfg.dt, "target": target}, value,
                     tolerance=1e-4, passed=abs(value - target) < 1e-4, seed=cfg.seed)]

    spec = single_drift(cfg, "sin")
    worst = 0.0
    for trial in range(cfg.trials):
        path = simulate_path(spec, cfg.x0, cfg.t, cfg.dt, cfg.seed, substream=trial)
        exact = flow_derivative(path, spec)
        difference = flow_finite_difference(spec, cfg.x0, path.noise, cfg.dt)
        worst = max(worst, abs(exact - difference) / abs(difference))
    rows.append(make_row(name, {"drift": spec.label, "check": "finite_difference", "trials": cfg.trials,
                                "dt": cfg.dt}, worst, tolerance=FD_RTOL, passed=worst < FD_RTOL, seed=cfg.seed))
    return rows


def _random_h(rng: np.random.Generator, horizon: float):
    """build_h on a random grid of at most three multiples of horizon / 20."""
    step = horizon / 20
    n = int(rng.integers(1, 4))
    picks = np.sort(rng.choice(np.arange(1, 20), size=n, replace=False))
    grid = TimeGrid(tuple(float(k * step) for k in picks), horizon=horizon)
    return build_h(grid, int(rng.integers(1, n + 1)))


def _duhamel(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    linear = get_drift("linear_test")
    path = simulate_path(linear, cfg.x0, cfg.t, cfg.dt, cfg.seed)
    h = indicator_vector(cfg.t, cfg.t)
    target = 1 - math.exp(linear.params[0] * cfg.t)
    value = malliavin_derivative_path(path, linear, h)
    rows = [make_row(name, {"drift": linear.label, "t": cfg.t, "dt": cfg.dt, "target": target}, value,
                     tolerance=1e-3, passed=abs(value - target) < 1e-3, seed=cfg.seed)]

    zero = get_drift("zero")
    rng = substream_rng(cfg.seed, 0)
    worst_zero = 0.0
    for trial in range(min(cfg.trials, 20)):
        h = _random_h(rng, cfg.t)
        path = simulate_path(zero, cfg.x0, cfg.t, cfg.dt, cfg.seed, substream=trial + 1)
        worst_zero = max(worst_zero, abs(malliavin_derivative_path(path, zero, h) - float(h.value(cfg.t))))
    rows.append(make_row(name, {"drift": zero.label, "check": "equals_h_t"}, worst_zero,
                         tolerance=1e-10, passed=worst_zero < 1e-10, seed=cfg.seed))

    spec = single_drift(cfg, "sin")
    worst = 0.0
    for trial in range(cfg.trials):
        h = _random_h(rng, cfg.t)
        path = simulate_path(spec, cfg.x0, cfg.t, cfg.dt, cfg.seed, substream=trial + 1)
        duhamel = malliavin_derivative_path(path, spec, h)
        shifted = wiener_shift_derivative(path, spec, h)
        scale = max(abs(duhamel), abs(shifted), SHIFT_FLOOR)
        worst = max(worst, abs(duhamel - shifted) / scale)
    rows.append(make_row(name, {"drift": spec.label, "check": "wiener_shift", "trials": cfg.trials},
                         worst, tolerance=SHIFT_RTOL, passed=worst < SHIFT_RTOL, seed=cfg.seed))
    return rows


def _gradient_norm(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    rows = []
    zero = get_drift("zero")
    linear = get_drift("linear_test")
    rate = -linear.params[0]
    for spec, target in (
        (zero, math.sqrt(cfg.t)),
        (linear, math.sqrt((1 - math.exp(-2 * rate * cfg.t)) / (2 * rate))),
    ):
        path = simulate_path(spec, cfg.x0, cfg.t, cfg.dt, cfg.seed)
        value = gradient_norm(path, spec)
        rows.append(make_row(name, {"drift": spec.label, "t": cfg.t, "target": target}, value,
                             tolerance=1e-4, passed=abs(value - target) < 1e-4, seed=cfg.seed))

    spec = single_drift(cfg, "sin")
    options = ensemble_options(cfg)
    coarse = gradient_norm_moments(spec, cfg.t, 10 * cfg.dt, cfg.paths, cfg.seed, x0=cfg.x0, **options)
    fine = gradient_norm_moments(spec, cfg.t, cfg.dt, cfg.paths, cfg.seed, x0=cfg.x0, **options)
    for power in fine:
        a, b = coarse[power], fine[power]
        tolerance = 3 * a.combined_se(b) + DT_STABILITY_SLACK * abs(b.value)
        stable = math.isfinite(b.value) and abs(a.value - b.value) <= tolerance
        rows.append(make_row(name, {"drift": spec.label, "moment": power, "dt": cfg.dt, "coarse": a.value},
                             b.value, std_error=b.std_error, tolerance=tolerance, passed=stable, seed=cfg.seed))
    return rows


def _sobolev(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    base = single_drift(cfg, "sign")
    rows = []
    values = []
    for level in MOLLIFICATION_LEVELS:
        spec = mollify(base, level)
        estimate = sobolev_norm_estimate(spec, cfg.t, cfg.R, cfg.p, cfg.n, cfg.paths, cfg.dt, cfg.seed,
                                         **ensemble_options(cfg))
        values.append(estimate.value)
        rows.append(make_row(name, {"drift": spec.label, "t": cfg.t, "R": cfg.R, "p": cfg.p, "paths": cfg.paths},
                             estimate.value, std_error=estimate.std_error, seed=cfg.seed))
    ratio = max(values) / min(values)
    rows.append(make_row(name, {"drift": base.label, "check": "max_min_ratio", "levels": MOLLIFICATION_LEVELS},
                         ratio, tolerance=UNIFORMITY_RATIO, passed=ratio < UNIFORMITY_RATIO, seed=cfg.seed))
    return rows


def _continuity(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "sin")
    report = time_continuity_check(spec, q=cfg.q, R=cfg.R, p=cfg.p, t1=cfg.t, resolution=cfg.n,
                                   paths=cfg.paths, dt=cfg.dt, seed=cfg.seed, **ensemble_options(cfg))
    params = {"drift": spec.label, "t1": cfg.t, "q": cfg.q, "p": cfg.p, "R": cfg.R}
    rows = [
        make_row(name, {**params, "gap": gap}, estimate.value, std_error=estimate.std_error, seed=cfg.seed)
        for gap, estimate in zip(report.gaps, report.estimates)
    ]
    rows.append(make_row(name, {**params, "check": "loglog_slope", "target": report.target}, report.slope,
                         tolerance=0.15 * report.target, passed=report.passed, seed=cfg.seed))
    return rows


def _mollification(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    base = single_drift(cfg, "sign")
    rows = []
    for level in MOLLIFICATION_LEVELS:
        spec = mollify(base, level)
        sup = check_bound(spec)
        rows.append(make_row(name, {"drift": spec.label, "check": "sup_bound", "bound": base.bound}, sup,
                             tolerance=QUADRATURE_SLACK, passed=sup <= base.bound + QUADRATURE_SLACK))
        away = 0.5 + 1.0 / level
        gap = abs(eval_b(spec, away) - eval_b(base, away))
        rows.append(make_row(name, {"drift": spec.label, "check": "matches_away_from_jump", "x": away}, gap,
                             tolerance=QUADRATURE_SLACK, passed=gap < QUADRATURE_SLACK))

    flows = averaged_mollified_flow(base, DIAGNOSTIC_LEVELS, cfg.x0, cfg.t, cfg.dt, cfg.seed)
    for i, level in enumerate(flows.levels):
        rows.append(make_row(name, {"drift": base.label, "check": "averaged_flow", "level": level,
                                    "endpoint": flows.endpoints[i], "derivative": flows.derivatives[i],
                                    "mean_derivative": flows.mean_derivatives[i]},
                             flows.mean_endpoints[i], seed=cfg.seed, note="diagnostic"))
    return rows


def _moment_bound(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "sin")
    M = cfg.M if cfg.M is not None else get_config().davie_m
    bound = moment_bound_value(cfg.p, cfg.t, cfg.T, spec.bound, M)
    report = exp_moment_check(spec, cfg.p, cfg.t, cfg.T, cfg.dt, cfg.paths, cfg.seed, x0=cfg.x0,
                              **ensemble_options(cfg))
    params = {"drift": spec.label, "p": cfg.p, "t": cfg.t, "T": cfg.T, "M": M}
    return [
        make_row(name, {**params, "check": "bound"}, bound, note="uses the configured Davie constant"),
        make_row(name, {**params, "check": "flow_moment", "bound": bound}, report.lhs.value,
                 std_error=report.lhs.std_error, tolerance=3 * report.lhs.std_error,
                 passed=report.lhs.value - 3 * report.lhs.std_error <= bound, seed=cfg.seed),
    ]


def _cocycle(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    spec = single_drift(cfg, "sin")
    r, s = step_count(cfg.t / 4, cfg.dt) * cfg.dt, step_count(cfg.t / 2, cfg.dt) * cfg.dt
    worst_cocycle = worst_factor = 0.0
    for trial in range(cfg.trials):
        path = simulate_path(spec, cfg.x0, cfg.t, cfg.dt, cfg.seed, substream=trial)
        worst_cocycle = max(worst_cocycle, flow_cocycle_residual(path, spec, r, s, cfg.t))
        worst_factor = max(worst_factor, increment_factorization_residual(path, spec, s, cfg.t))
    params = {"drift": spec.label, "trials": cfg.trials, "dt": cfg.dt}
    return [
        make_row(name, {**params, "check": "cocycle", "r": r, "s": s, "t": cfg.t}, worst_cocycle,
                 tolerance=PATH_TOLERANCE, passed=worst_cocycle < PATH_TOLERANCE, seed=cfg.seed),
        make_row(name, {**params, "check": "increment_factorization", "t1": s, "t2": cfg.t}, worst_factor,
                 tolerance=PATH_TOLERANCE, passed=worst_factor < PATH_TOLERANCE, seed=cfg.seed),
    ]


_HANDLERS = {
    "euler_convergence": _euler_convergence,
    "girsanov": _girsanov,
    "exp_moment": _exp_moment,
    "half_factorial_series": _series,
    "flow_derivative": _flow_derivative,
    "duhamel": _duhamel,
    "gradient_norm": _gradient_norm,
    "sobolev_uniformity": _sobolev,
    "time_continuity": _continuity,
    "mollification_check": _mollification,
    "moment_bound": _moment_bound,
    "flow_cocycle": _cocycle,
}


def execute_flow_experiment(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    """Execute a stochastic flow experiment."""
    logger.info(f"🧪 FLOW: {name}")
    return _HANDLERS[name](name, cfg)
