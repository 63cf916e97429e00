"""
Helpers shared by the experiment families.
"""

from typing import Any, Sequence

from malliavin_lab.reporting.experiment_config import ExperimentConfig
from malliavin_lab.services.drift_registry import DriftSpec, get_drift


def drift_specs(cfg: ExperimentConfig, fallback: Sequence[str]) -> list[DriftSpec]:
    """The configured drift, or the experiment's standard family when none is set."""
    if cfg.drift:
        return [get_drift(cfg.drift, cfg.drift_params)]
    return [get_drift(name) for name in fallback]


def single_drift(cfg: ExperimentConfig, fallback: str) -> DriftSpec:
    if cfg.drift:
        return get_drift(cfg.drift, cfg.drift_params)
    return get_drift(fallback)


def ensemble_options(cfg: ExperimentConfig) -> dict[str, Any]:
    return {"substreams": cfg.substreams, "workers": cfg.workers}
