"""Task-parallel SPH solver on the Gresho-Chan vortex."""

from ._tasksph import (
    ConfigError,
    DomainError,
    Error,
    InvariantError,
    NumericalError,
    UsageError,
    analytic,
    config_keys,
    device_sizing,
    kernel,
    run,
    simulate_trace,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "InvariantError",
    "NumericalError",
    "UsageError",
    "analytic",
    "config_keys",
    "device_sizing",
    "kernel",
    "run",
    "simulate_trace",
]
