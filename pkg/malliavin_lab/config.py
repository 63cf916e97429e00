"""
Configuration management for Malliavin Lab.

Loads environment variables and provides typed access to process-level settings.
Per-experiment parameters live in experiment config files (see reporting.experiment_config).
"""

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def load_env():
    """Load environment variables from .env file."""
    env_path = Path(__file__).parent.parent / ".env"
    if env_path.exists():
        load_dotenv(env_path)
    else:
        load_dotenv()


@dataclass
class Config:
    """Process configuration."""

    # Application settings
    log_level: str = "INFO"
    environment: str = "development"

    # Ensemble fan-out
    parallelism: int = 1
    substreams: int = 16

    # Reporting
    output_dir: str = "reports"

    # Davie constant surrogate used when an experiment file sets no M
    davie_m: float = 2.0

    @classmethod
    def from_env(cls) -> "Config":
        """Create Config from environment variables."""
        load_env()

        return cls(
            log_level=os.environ.get("LOG_LEVEL", "INFO").upper(),
            environment=os.environ.get("ENVIRONMENT", "development"),
            parallelism=int(os.environ.get("PARALLELISM", "1")),
            substreams=int(os.environ.get("LAB_SUBSTREAMS", "16")),
            output_dir=os.environ.get("LAB_OUTPUT_DIR", "reports"),
            davie_m=float(os.environ.get("DAVIE_M", "2.0")),
        )

    def validate(self) -> list[str]:
        """Validate configuration values. Returns list of problems."""
        problems = []
        if self.log_level not in LOG_LEVELS:
            problems.append(f"LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")
        if self.parallelism < 1:
            problems.append("PARALLELISM must be >= 1")
        if self.substreams < 1:
            problems.append("LAB_SUBSTREAMS must be >= 1")
        if self.davie_m <= 0:
            problems.append("DAVIE_M must be > 0")
        return problems


# Global config instance (lazy loaded)
_config: Optional[Config] = None


def get_config() -> Config:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = Config.from_env()
    return _config


def reset_config():
    """Reset the global configuration (useful for testing)."""
    global _config
    _config = None
