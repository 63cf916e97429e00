"""
Seeded Monte Carlo ensembles.

Samples are split over explicitly indexed Philox substreams and merged by
moment accumulation in substream order, so the worker count never changes
the result.
"""

import logging
import math
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Callable, Optional, Union

import numpy as np

from malliavin_lab.shared.errors import InvalidParameterError

logger = logging.getLogger(__name__)

GENERATOR_ID = "numpy.Philox"
MAX_SEED = 2**64 - 1

# A kernel draws `count` samples from `rng` and returns one array per statistic.
Kernel = Callable[[np.random.Generator, int], Union[np.ndarray, dict[str, np.ndarray]]]


@dataclass(frozen=True)
class EstimateWithError:
    """A value with its standard error (0 for deterministic methods)."""

    value: float
    std_error: float = 0.0
    method: str = "closed"
    count: int = 0
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.std_error >= 0:
            raise InvalidParameterError(f"std_error must be >= 0, got {self.std_error}")

    def combined_se(self, other: "EstimateWithError") -> float:
        """Standard error of the difference of two independent estimates."""
        return math.hypot(self.std_error, other.std_error)

    def agrees_with(self, target: float, n_se: float = 3.0, slack: float = 0.0) -> bool:
        """True when |value - target| is within n_se standard errors plus slack."""
        return abs(self.value - target) <= n_se * self.std_error + slack


@dataclass(frozen=True)
class EnsembleEstimate(EstimateWithError):
    """Monte Carlo mean over an ensemble of independent samples."""

    method: str = "monte_carlo"

    def __post_init__(self):
        super().__post_init__()
        if self.count < 2:
            raise InvalidParameterError(f"ensemble needs count >= 2, got {self.count}")

    @property
    def mean(self) -> float:
        return self.value


@dataclass
class MomentAccumulator:
    """Running count, mean and centered second moment (pairwise merge)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, samples) -> None:
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            return
        mean = float(samples.mean())
        self.merge(MomentAccumulator(samples.size, mean, float(((samples - mean) ** 2).sum())))

    def merge(self, other: "MomentAccumulator") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    def estimate(self, seed: Optional[int] = None, method: str = "monte_carlo") -> EnsembleEstimate:
        std_error = math.sqrt(self.variance / self.count) if self.count > 1 else 0.0
        return EnsembleEstimate(
            value=self.mean, std_error=std_error, method=method, count=self.count, seed=seed
        )


def validate_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= MAX_SEED:
        raise InvalidParameterError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def substream_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for substream `index` of `seed`."""
    sequence = np.random.SeedSequence(validate_seed(seed), spawn_key=(index,))
    return np.random.Generator(np.random.Philox(sequence))


def split_counts(total: int, substreams: int) -> list[int]:
    """Deterministic split of `total` samples over `substreams` substreams."""
    if total < 1 or substreams < 1:
        raise InvalidParameterError(f"need total >= 1 and substreams >= 1, got {total}, {substreams}")
    base, extra = divmod(total, substreams)
    return [base + (1 if i < extra else 0) for i in range(substreams)]


def _run_substream(task: tuple) -> dict[str, tuple[int, float, float]]:
    kernel, seed, index, count = task
    result = kernel(substream_rng(seed, index), count)
    if not isinstance(result, dict):
        result = {"value": result}
    summary = {}
    for name, samples in result.items():
        acc = MomentAccumulator()
        acc.add(samples)
        summary[name] = (acc.count, acc.mean, acc.m2)
    return summary


def run_ensemble(
    kernel: Kernel,
    total: int,
    seed: int,
    substreams: Optional[int] = None,
    workers: Optional[int] = None,
) -> dict[str, MomentAccumulator]:
    """
    Fan a sampling kernel out over substreams and merge the moments.

    Args:
        kernel: Picklable callable (rng, count) -> array or dict of arrays
        total: Total number of samples
        seed: Unsigned 64-bit master seed
        substreams: Number of substreams (defaults to the process config)
        workers: Worker processes (defaults to PARALLELISM)

    Returns:
        One MomentAccumulator per statistic name
    """
    from malliavin_lab.config import get_config

    config = get_config()
    substreams = substreams or config.substreams
    workers = workers or config.parallelism
    seed = validate_seed(seed)

    counts = split_counts(total, min(substreams, total))
    tasks = [(kernel, seed, index, count) for index, count in enumerate(counts)]
    logger.info(f"🎲 ENSEMBLE: {total} samples, {len(tasks)} substreams, {workers} workers")

    if workers > 1:
        with Pool(processes=workers) as pool:
            summaries = pool.map(_run_substream, tasks)
    else:
        summaries = [_run_substream(task) for task in tasks]

    merged: dict[str, MomentAccumulator] = {}
    for summary in summaries:
        for name, (count, mean, m2) in summary.items():
            merged.setdefault(name, MomentAccumulator()).merge(MomentAccumulator(count, mean, m2))
    return merged


def ensemble_estimates(
    kernel: Kernel,
    total: int,
    seed: int,
    substreams: Optional[int] = None,
    workers: Optional[int] = None,
    method: str = "monte_carlo",
) -> dict[str, EnsembleEstimate]:
    """run_ensemble followed by conversion to estimates."""
    merged = run_ensemble(kernel, total, seed, substreams=substreams, workers=workers)
    return {name: acc.estimate(seed=seed, method=method) for name, acc in merged.items()}
