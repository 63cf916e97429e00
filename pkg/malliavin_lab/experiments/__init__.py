"""
Experiment registry for Malliavin Lab.

Defines all experiment schemas and the central dispatcher.
"""

import logging
from dataclasses import replace
from datetime import datetime, timezone
from typing import Optional

from malliavin_lab.reporting.csv_report import ReportRow, make_row
from malliavin_lab.reporting.experiment_config import ExperimentConfig
from malliavin_lab.shared.errors import ConfigError, LabError, UnknownExperimentError

from .algebra import ALGEBRA_EXPERIMENTS, execute_algebra_experiment
from .kernel import KERNEL_EXPERIMENTS, execute_kernel_experiment
from .simplex import SIMPLEX_EXPERIMENTS, execute_simplex_experiment
from .flow import FLOW_EXPERIMENTS, execute_flow_experiment

logger = logging.getLogger(__name__)

# All experiments invocable from the CLI
ALL_EXPERIMENTS = (
    ALGEBRA_EXPERIMENTS
    + KERNEL_EXPERIMENTS
    + SIMPLEX_EXPERIMENTS
    + FLOW_EXPERIMENTS
)

# Experiment name to executor mapping
_EXPERIMENT_EXECUTORS = {}
_EXPERIMENT_SCHEMAS = {}


def _register_experiments(experiments_list, executor):
    """Register experiment names to their executor function."""
    for experiment in experiments_list:
        name = experiment["name"]
        _EXPERIMENT_EXECUTORS[name] = executor
        _EXPERIMENT_SCHEMAS[name] = experiment


_register_experiments(ALGEBRA_EXPERIMENTS, execute_algebra_experiment)
_register_experiments(KERNEL_EXPERIMENTS, execute_kernel_experiment)
_register_experiments(SIMPLEX_EXPERIMENTS, execute_simplex_experiment)
_register_experiments(FLOW_EXPERIMENTS, execute_flow_experiment)


def list_experiments() -> list[str]:
    return [experiment["name"] for experiment in ALL_EXPERIMENTS]


def get_schema(name: str) -> dict:
    schema = _EXPERIMENT_SCHEMAS.get(name)
    if schema is None:
        raise UnknownExperimentError(name, list_experiments())
    return schema


def run_experiment(cfg: ExperimentConfig, timestamp: Optional[str] = None) -> list[ReportRow]:
    """
    Run an experiment by name.

    Args:
        cfg: Validated experiment config; unset fields take the experiment's defaults
        timestamp: Run time stamped on every row (defaults to now, UTC)

    Returns:
        Report rows. Module errors become a single failed row; config errors
        and unknown experiment names propagate.
    """
    executor = _EXPERIMENT_EXECUTORS.get(cfg.experiment)
    if executor is None:
        raise UnknownExperimentError(cfg.experiment, list_experiments())

    resolved = cfg.with_defaults(get_schema(cfg.experiment).get("defaults", {}))
    logger.info(f"🚀 RUN: {cfg.experiment} (seed={cfg.seed})")

    try:
        rows = executor(cfg.experiment, resolved)
    except ConfigError:
        raise
    except (LabError, ValueError, ArithmeticError) as e:
        logger.error(f"❌ {cfg.experiment} failed: {e}")
        rows = [make_row(cfg.experiment, resolved.parameters(), float("nan"), passed=False,
                         seed=cfg.seed, note=f"{type(e).__name__}: {e}")]

    stamp = timestamp or datetime.now(timezone.utc).isoformat()
    rows = [replace(row, seed=cfg.seed, timestamp=stamp) for row in rows]

    passed = sum(1 for row in rows if row.passed is True)
    failed = sum(1 for row in rows if row.passed is False)
    logger.info(f"✅ DONE: {cfg.experiment}: {len(rows)} rows, {passed} passed, {failed} failed")
    return rows
