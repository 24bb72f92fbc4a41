"""Exception types shared across the package.

Every anticipated failure mode raises a subclass of :class:`RelocError`
so callers can distinguish "the input is bad" from genuine bugs.
"""

from __future__ import annotations


class RelocError(Exception):
    """Base class for all errors raised by this package."""


class SingularInputError(RelocError):
    """A 3x3 input was too close to rank deficient to orthogonalize."""


class ZeroVectorError(RelocError):
    """A vector that must have positive norm was (numerically) zero."""


class ZeroBaselineError(RelocError):
    """Two camera centers coincide, so no translation direction exists."""


class EmptyInputError(RelocError):
    """An aggregate operation received an empty collection."""


class DegenerateMeanError(RelocError):
    """Averaged quaternion collapsed to (numerically) zero norm."""


class DegenerateGeometryError(RelocError):
    """Triangulation normal system is rank deficient (e.g. collinear rays).

    Carries the measured ``condition_ratio`` (smallest over largest
    singular value of the normal matrix).
    """

    def __init__(self, message: str, condition_ratio: float | None = None):
        super().__init__(message)
        self.condition_ratio = condition_ratio


class TooFewPairsError(RelocError):
    """Fewer usable pair observations than the configured minimum."""


class DimensionMismatchError(RelocError):
    """Array shape incompatible with the model configuration."""


class NonFiniteLossError(RelocError):
    """Training loss became NaN or infinite."""


class ParseError(RelocError):
    """Malformed text input. Message always names the file and line."""

    def __init__(self, path, line_no: int | None, message: str):
        location = f"{path}:{line_no}" if line_no is not None else str(path)
        super().__init__(f"{location}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DuplicateIdError(ParseError):
    """The same identifier (or identifier pair) appeared twice."""


class InvalidRotationError(ParseError):
    """Parsed rotation fails orthonormality beyond the input tolerance."""


class UnknownIdError(RelocError):
    """An identifier references an entry that does not exist."""


class MissingGroundTruthError(RelocError):
    """A result has no matching ground-truth pose."""


class InsufficientDatabaseError(RelocError):
    """Retrieval asked for more neighbors than the database holds."""


class KeyMismatchError(RelocError):
    """Two keyed collections that must align do not share the same keys."""
