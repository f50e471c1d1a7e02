"""Reward-guided sequential Monte Carlo over tabular language models."""

from ._core import (
    WORKERS_ENV,
    ConfigError,
    Error,
    oracle_probabilities,
    report,
    run,
    smc,
    verify,
)

__all__ = [
    "WORKERS_ENV",
    "ConfigError",
    "Error",
    "oracle_probabilities",
    "report",
    "run",
    "smc",
    "verify",
]
