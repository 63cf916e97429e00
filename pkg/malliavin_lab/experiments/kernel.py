"""
Heat kernel experiments - semigroup, tail bound, heat equation, density normalization.
"""

import logging

import numpy as np

from malliavin_lab.reporting.csv_report import ReportRow, make_row
from malliavin_lab.reporting.experiment_config import ExperimentConfig
from malliavin_lab.experiments.common import ensemble_options
from malliavin_lab.services.gaussian_algebra import random_grid
from malliavin_lab.services.heat_kernel import (
    chapman_kolmogorov_residual,
    derivative_tail_bound,
    heat_equation_residual,
    kernel_derivative,
    mixed_partial_terms,
    normalization_estimate,
)
from malliavin_lab.shared.ensemble import substream_rng

logger = logging.getLogger(__name__)

KERNEL_LATTICE = np.linspace(-6.0, 6.0, 241)
KERNEL_TIMES = (0.1, 0.5, 1.0, 2.0)


KERNEL_EXPERIMENTS = [
    {
        "name": "heat_kernel_identities",
        "description": "Chapman-Kolmogorov, derivative tail bound, heat equation, term counts, normalization",
        "defaults": {"n": 4, "paths": 100_000},
    },
]


def _identities(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    rows = []

    worst = max(
        chapman_kolmogorov_residual(s1, s2, y)
        for s1, s2 in ((0.2, 0.5), (0.5, 1.0), (1.0, 3.0))
        for y in (-1.5, 0.0, 0.7, 2.5)
    )
    rows.append(make_row(name, {"check": "chapman_kolmogorov"}, worst, tolerance=1e-10, passed=worst < 1e-10))

    # Equality holds at |x| = sqrt(2t)
    ratio = max(
        float(np.max(np.abs(kernel_derivative(t, KERNEL_LATTICE, 1)) / derivative_tail_bound(t, KERNEL_LATTICE)))
        for t in KERNEL_TIMES
    )
    rows.append(make_row(name, {"check": "derivative_tail_bound"}, ratio, tolerance=1e-12, passed=ratio <= 1 + 1e-12))

    worst = max(heat_equation_residual(t, x) for t in KERNEL_TIMES[1:] for x in (-2.0, -0.3, 0.0, 1.0, 2.0))
    rows.append(make_row(name, {"check": "heat_equation"}, worst, tolerance=1e-6, passed=worst < 1e-6))

    for n in range(1, cfg.n + 1):
        count = len(mixed_partial_terms(n))
        rows.append(make_row(name, {"check": "mixed_partial_terms", "n": n}, count,
                             tolerance=0, passed=count == 2 ** (n - 1)))

    grid = random_grid(substream_rng(cfg.seed, 0), cfg.n, min_gap=0.05)
    estimate = normalization_estimate(grid, cfg.paths, cfg.seed, **ensemble_options(cfg))
    rows.append(make_row(name, {"check": "normalization", "n": cfg.n, "paths": cfg.paths},
                         estimate.value, std_error=estimate.std_error, tolerance=3 * estimate.std_error,
                         passed=estimate.agrees_with(1.0), seed=cfg.seed))
    return rows


def execute_kernel_experiment(name: str, cfg: ExperimentConfig) -> list[ReportRow]:
    """Execute a heat kernel experiment."""
    logger.info(f"🧪 KERNEL: {name}")
    if name == "heat_kernel_identities":
        return _identities(name, cfg)
    raise KeyError(name)
