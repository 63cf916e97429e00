"""Tests for the experiment registry and dispatcher."""

import math

import pytest

from malliavin_lab.experiments import ALL_EXPERIMENTS, get_schema, list_experiments, run_experiment
from malliavin_lab.reporting.experiment_config import ExperimentConfig
from malliavin_lab.shared.errors import UnknownExperimentError


class TestRegistry:

    def test_names_are_unique(self):
        names = list_experiments()
        assert len(names) == len(set(names)) == len(ALL_EXPERIMENTS)

    def test_every_experiment_is_described(self):
        for experiment in ALL_EXPERIMENTS:
            assert experiment["description"]
            assert isinstance(experiment.get("defaults", {}), dict)

    def test_core_experiments_registered(self):
        names = set(list_experiments())
        assert {"representation_residual", "ibp_pointwise", "eta_check", "volume_bound_chain",
                "i1_closed_form", "girsanov", "exp_moment", "half_factorial_series"} <= names

    def test_unknown_schema(self):
        with pytest.raises(UnknownExperimentError):
            get_schema("warp_drive")


class TestRunExperiment:
    """Dispatch, defaults and row stamping."""

    def test_unknown_experiment(self):
        with pytest.raises(UnknownExperimentError) as exc:
            run_experiment(ExperimentConfig(experiment="warp_drive"))
        assert "eta_check" in exc.value.available

    def test_half_factorial_series(self):
        rows = run_experiment(ExperimentConfig(experiment="half_factorial_series", seed=3), timestamp="T")
        assert len(rows) == 3
        assert all(row.passed for row in rows)
        assert all(row.seed == 3 and row.timestamp == "T" for row in rows)
        assert "terms=120" in rows[0].parameters

    def test_lambda_closed_forms(self):
        rows = run_experiment(ExperimentConfig(experiment="lambda_closed_forms", n=3))
        assert len(rows) == 1 + 3 + 3 * 3 + 3
        checked = [row for row in rows if row.passed is not None]
        uniform = [row for row in rows if "three_point_uniform_contraction" in row.parameters]
        assert len(checked) == 13
        assert all(row.passed for row in checked)
        assert len(uniform) == 3
        assert all(row.value > 0 for row in uniform)

    def test_i2_methods_agree(self):
        cfg = ExperimentConfig(experiment="i2_bound", drift="sin", t=1.0, dt=0.005, paths=2000, seed=4,
                               substreams=4, workers=1)
        rows = run_experiment(cfg)
        agreement = [row for row in rows if "method_agreement" in row.parameters]
        assert len(rows) == 3
        assert len(agreement) == 1
        assert agreement[0].passed
        assert agreement[0].std_error > 0

    def test_eta_check_single_time(self):
        rows = run_experiment(ExperimentConfig(experiment="eta_check", n=4, t=1.0))
        assert len(rows) == 4
        assert all(row.passed for row in rows)

    def test_volume_bound_chain(self):
        rows = run_experiment(ExperimentConfig(experiment="volume_bound_chain", n=6))
        assert all(row.passed for row in rows)

    def test_flow_cocycle(self):
        rows = run_experiment(ExperimentConfig(experiment="flow_cocycle", trials=2, dt=0.01))
        assert len(rows) == 2
        assert all(row.passed for row in rows)

    def test_service_error_becomes_failed_row(self):
        cfg = ExperimentConfig(experiment="i1_closed_form", drift="cos", seed=5)
        rows = run_experiment(cfg)
        assert len(rows) == 1
        assert rows[0].passed is False
        assert math.isnan(rows[0].value)
        assert rows[0].note.startswith("InvalidParameterError")
        assert rows[0].seed == 5
