"""Exception hierarchy shared across the package."""


class RobinSyncError(Exception):
    """Base class for all package errors."""


class InputError(RobinSyncError, ValueError):
    """Malformed or inconsistent input (shapes, non-finite entries, ...)."""


class NumericError(RobinSyncError, ArithmeticError):
    """A numerical routine failed (eigen-solver, singular system)."""


class CompatibilityError(RobinSyncError, ValueError):
    """A matrix fails the C_p-compatibility precondition of an operation."""


class NotBiorthonormalizableError(NumericError):
    """The Gram matrix between two bases is singular."""


class UnsupportedError(RobinSyncError, NotImplementedError):
    """The input falls outside what the routine supports (e.g. defective matrices)."""


class InstabilityError(RobinSyncError, ArithmeticError):
    """The time stepping violated its stability bound or blew up."""


class OptimizationError(RobinSyncError, RuntimeError):
    """The control optimizer diverged."""
