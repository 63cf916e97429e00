"""
CSV Report - Report rows, CSV output and the YAML provenance sidecar.

CSV bodies carry no timestamps, so identical (config, seed) runs produce
byte-identical files; the run time lives in `<file>.meta.yaml`.
"""

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from malliavin_lab import __version__
from malliavin_lab.shared.ensemble import GENERATOR_ID

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "experiment",
    "parameters",
    "value",
    "std_error",
    "tolerance",
    "passed",
    "seed",
    "version",
    "note",
]
SIDECAR_SUFFIX = ".meta.yaml"


@dataclass(frozen=True)
class ReportRow:
    """One measured quantity, optionally with a pass/fail verdict."""

    experiment: str
    parameters: str
    value: float
    std_error: float = 0.0
    tolerance: Optional[float] = None
    passed: Optional[bool] = None
    seed: Optional[int] = None
    timestamp: str = ""
    version: str = __version__
    note: str = ""


def flatten_parameters(parameters: dict[str, Any]) -> str:
    """`k=v;k=v` in insertion order; tuples become comma lists."""
    parts = []
    for key, value in parameters.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(_format_number(v) for v in value)
        elif isinstance(value, float):
            value = _format_number(value)
        parts.append(f"{key}={value}")
    return ";".join(parts)


def make_row(experiment: str, parameters: dict[str, Any], value, std_error: float = 0.0,
             tolerance: Optional[float] = None, passed: Optional[bool] = None,
             seed: Optional[int] = None, note: str = "") -> ReportRow:
    return ReportRow(
        experiment=experiment,
        parameters=flatten_parameters(parameters),
        value=float(value),
        std_error=float(std_error),
        tolerance=None if tolerance is None else float(tolerance),
        passed=None if passed is None else bool(passed),
        seed=seed,
        note=note,
    )


def _format_number(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _csv_cells(row: ReportRow) -> list[str]:
    return [
        row.experiment,
        row.parameters,
        _format_number(row.value),
        _format_number(row.std_error),
        "" if row.tolerance is None else _format_number(row.tolerance),
        "" if row.passed is None else ("true" if row.passed else "false"),
        "" if row.seed is None else str(row.seed),
        row.version,
        row.note,
    ]


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def write_csv(rows: Sequence[ReportRow], path, config_hash: Optional[str] = None,
              seed: Optional[int] = None, timestamp: Optional[str] = None) -> Path:
    """
    Write rows as UTF-8 CSV plus the provenance sidecar.

    Args:
        rows: Report rows (may be empty: header only)
        path: Destination CSV file
        config_hash: Hash of the serialized experiment config
        seed: Master seed of the run
        timestamp: Run time (defaults to now, UTC); stored in the sidecar only

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(_csv_cells(row))

    metadata = {
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
        "generator": GENERATOR_ID,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(),
        "rows": len(rows),
        "passed": sum(1 for row in rows if row.passed is True),
        "failed": sum(1 for row in rows if row.passed is False),
    }
    with sidecar_path(path).open("w", encoding="utf-8") as handle:
        yaml.safe_dump(metadata, handle, sort_keys=False)

    logger.info(f"💾 REPORT: {len(rows)} rows -> {path}")
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def read_sidecar(path) -> dict:
    sidecar = sidecar_path(path)
    if not sidecar.exists():
        return {}
    with sidecar.open(encoding="utf-8") as handle:
        return yaml.safe_load(handle) or {}


@dataclass
class ReportSummary:
    """Pass/fail counts for one CSV report."""
    path: Path
    experiments: list[str]
    rows: int
    passed: int
    failed: int
    metadata: dict

    @property
    def informational(self) -> int:
        return self.rows - self.passed - self.failed


def summarize_reports(directory) -> list[ReportSummary]:
    """One summary per `*.csv` file in `directory`, sorted by name."""
    summaries = []
    for path in sorted(Path(directory).glob("*.csv")):
        rows = read_csv(path)
        summaries.append(ReportSummary(
            path=path,
            experiments=sorted({row["experiment"] for row in rows}),
            rows=len(rows),
            passed=sum(1 for row in rows if row["passed"] == "true"),
            failed=sum(1 for row in rows if row["passed"] == "false"),
            metadata=read_sidecar(path),
        ))
    return summaries
