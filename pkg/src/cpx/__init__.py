"""Centralized federated primal-dual optimisation simulator."""

from .algorithms import METHODS, AlgoConfig, init_state, run_round
from .errors import (
    ConfigError,
    ConstraintError,
    CpxError,
    FormatError,
    InputError,
    MisuseError,
    TheoryViolation,
    UnsupportedMethodError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "AlgoConfig",
    "init_state",
    "run_round",
    "BACKEND",
    "ConfigError",
    "ConstraintError",
    "CpxError",
    "FormatError",
    "InputError",
    "MisuseError",
    "TheoryViolation",
    "UnsupportedMethodError",
]
