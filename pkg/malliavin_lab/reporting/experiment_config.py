"""
Experiment Config - Parse and serialize experiment files.

Format: line-oriented `key = value` with optional `[section]` headers.
`#` and `;` start comment lines. Unknown sections and keys are fatal.
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Optional

from malliavin_lab.shared.ensemble import MAX_SEED
from malliavin_lab.shared.errors import ConfigError, LabError

logger = logging.getLogger(__name__)

SECTION_RE = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
ASSIGN_RE = re.compile(r"^([A-Za-z_][\w]*)\s*=\s*(.*)$")
COMMENT_PREFIXES = ("#", ";")


def _parse_params(raw: str) -> tuple:
    return tuple(float(part) for part in raw.split(",") if part.strip())


# Section -> key -> parser
SECTIONS: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {
        "experiment": str,
        "seed": int,
        "workers": int,
        "substreams": int,
        "out_dir": str,
    },
    "drift": {
        "drift": str,
        "drift_params": _parse_params,
    },
    "grid": {
        "n": int,
        "t": float,
        "T": float,
        "dt": float,
        "x0": float,
        "R": float,
        "p": float,
        "q": float,
    },
    "ensemble": {
        "paths": int,
        "trials": int,
    },
    "davie": {
        "M": float,
    },
}

KEY_SECTIONS = {key: section for section, keys in SECTIONS.items() for key in keys}


@dataclass
class ExperimentConfig:
    """One experiment run. Unset numeric fields take the experiment's defaults."""

    experiment: str
    seed: int = 0
    workers: Optional[int] = None
    substreams: Optional[int] = None
    out_dir: Optional[str] = None

    drift: Optional[str] = None
    drift_params: tuple = ()

    n: Optional[int] = None
    t: Optional[float] = None
    T: Optional[float] = None
    dt: Optional[float] = None
    x0: Optional[float] = None
    R: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None

    paths: Optional[int] = None
    trials: Optional[int] = None

    M: Optional[float] = None

    # Source line of each key, for error messages
    lines: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def with_defaults(self, defaults: dict[str, Any]) -> "ExperimentConfig":
        """Copy with unset fields filled from `defaults`."""
        missing = {key: value for key, value in defaults.items() if getattr(self, key) is None}
        return replace(self, **missing) if missing else self

    def parameters(self) -> dict[str, Any]:
        """Set fields other than run bookkeeping, in declaration order."""
        skip = {"experiment", "seed", "workers", "substreams", "out_dir", "lines"}
        values = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in skip or value is None or value == ():
                continue
            values[f.name] = value
        return values


# =============================================================================
# Parsing
# =============================================================================

def parse_config_text(text: str) -> ExperimentConfig:
    """Parse experiment-file text. Raises ConfigError with the offending line."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    section: Optional[str] = None

    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith(COMMENT_PREFIXES):
            continue

        header = SECTION_RE.match(line)
        if header:
            section = header.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SECTIONS)}", number)
            continue

        assignment = ASSIGN_RE.match(line)
        if not assignment:
            raise ConfigError(f"expected 'key = value', got {line!r}", number)
        key, raw = assignment.group(1), assignment.group(2).strip()

        home = KEY_SECTIONS.get(key)
        if home is None:
            raise ConfigError(f"unknown key '{key}'", number)
        if section is not None and home != section:
            raise ConfigError(f"key '{key}' belongs in [{home}], not [{section}]", number)
        if key in values:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[key]})", number)
        if raw == "":
            raise ConfigError(f"key '{key}' has no value", number)

        try:
            values[key] = SECTIONS[home][key](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {e}", number)
        lines[key] = number

    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")

    config = ExperimentConfig(**values, lines=lines)
    validate_config(config)
    return config


def parse_config(path) -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Args:
        path: Path to the file

    Returns:
        Validated ExperimentConfig (defaults are applied at dispatch time)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    config = parse_config_text(text)
    logger.info(f"📄 CONFIG: {path} -> experiment={config.experiment}, seed={config.seed}")
    return config


# Field -> (predicate, message)
_CONSTRAINTS: dict[str, tuple[Callable[[Any], bool], str]] = {
    "seed": (lambda v: 0 <= v <= MAX_SEED, "must be an unsigned 64-bit integer"),
    "workers": (lambda v: v >= 1, "must be >= 1"),
    "substreams": (lambda v: v >= 1, "must be >= 1"),
    "n": (lambda v: v >= 1, "must be >= 1"),
    "t": (lambda v: v > 0, "must be > 0"),
    "T": (lambda v: v > 0, "must be > 0"),
    "dt": (lambda v: v > 0, "must be > 0"),
    "R": (lambda v: v > 0, "must be > 0"),
    "p": (lambda v: v >= 1, "must be >= 1"),
    "q": (lambda v: v > 0, "must be > 0"),
    "paths": (lambda v: v >= 2, "must be >= 2"),
    "trials": (lambda v: v >= 1, "must be >= 1"),
    "M": (lambda v: v > 0, "must be > 0"),
}


def validate_config(config: ExperimentConfig) -> None:
    """Check numeric ranges and that the experiment and drift names resolve."""
    from malliavin_lab.experiments import list_experiments
    from malliavin_lab.services.drift_registry import get_drift

    for name, (check, message) in _CONSTRAINTS.items():
        value = getattr(config, name)
        if value is not None and not check(value):
            raise ConfigError(f"'{name}' {message}, got {value}", config.lines.get(name))

    if config.t is not None and config.T is not None and config.t > config.T:
        raise ConfigError(f"need t <= T, got t={config.t}, T={config.T}", config.lines.get("t"))

    if config.experiment not in list_experiments():
        raise ConfigError(
            f"unknown experiment '{config.experiment}'; available: {', '.join(list_experiments())}",
            config.lines.get("experiment"),
        )

    if config.drift is not None:
        try:
            get_drift(config.drift, config.drift_params)
        except LabError as e:
            raise ConfigError(str(e), config.lines.get("drift"))


# =============================================================================
# Serialization
# =============================================================================

def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """Experiment-file text that parses back to an equal config."""
    out = []
    for section, keys in SECTIONS.items():
        entries = []
        for key in keys:
            value = getattr(config, key)
            if value is None or value == ():
                continue
            entries.append(f"{key} = {_format_value(value)}")
        if entries:
            if out:
                out.append("")
            out.append(f"[{section}]")
            out.extend(entries)
    return "\n".join(out) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    """Short sha256 of the serialized config."""
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()[:16]
