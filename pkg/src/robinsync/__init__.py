"""Algebraic criteria and numerical experiments for approximate boundary
synchronization by groups of coupled wave equations with Robin coupling."""

from .exceptions import (
    CompatibilityError,
    InputError,
    InstabilityError,
    NotBiorthonormalizableError,
    NumericError,
    OptimizationError,
    RobinSyncError,
    UnsupportedError,
)
from .linalg import DEFAULT_TOL, SubspaceBasis, Tolerances
from .syncalg import GroupPartition, SyncAnalysis, SyncProblem, analyze

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "InputError",
    "InstabilityError",
    "NotBiorthonormalizableError",
    "NumericError",
    "OptimizationError",
    "RobinSyncError",
    "UnsupportedError",
    "DEFAULT_TOL",
    "SubspaceBasis",
    "Tolerances",
    "GroupPartition",
    "SyncAnalysis",
    "SyncProblem",
    "analyze",
]
