"""Exception types shared across the package."""


class PregenericError(Exception):
    """Base class for all package errors."""


class SpaceMismatchError(PregenericError):
    """Operands live on different state spaces."""


class PositivityError(PregenericError):
    """A density (or rate) violates a strict positivity requirement."""


class MassError(PregenericError):
    """Total mass is zero, negative, or too far from 1."""


class NonErgodicError(PregenericError):
    """Generator kernel is multi-dimensional (reducible chain)."""


class StructureError(PregenericError):
    """A structural invariant (adjointness, symmetry, stationarity) fails."""


class ConvergenceError(PregenericError):
    """An iterative solve did not converge."""
