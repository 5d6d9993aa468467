"""Exception hierarchy shared across the library.

Three broad families, matching the CLI exit-code contract: configuration
errors (exit 2), data errors (exit 3), and numeric degeneracies (exit 4).
"""

from __future__ import annotations


class ClusterBootError(Exception):
    """Base class for all library errors."""


# ---------------------------------------------------------------------
# Configuration / usage errors (CLI exit code 2)
# ---------------------------------------------------------------------


class ConfigError(ClusterBootError):
    """Invalid configuration or command usage."""


class InvalidConfig(ConfigError):
    """A configuration record violates its own invariants."""


class UnknownDesign(ConfigError):
    """A simulation design name is not registered."""


class InvalidMoment(ConfigError):
    """Requested wild-weight second moment is not strictly positive."""


class SampleTooSmall(ConfigError):
    """Moment-corrected wild weights need at least three observations."""


class TooFewReplicates(ConfigError):
    """Quantile-based inference needs enough bootstrap replicates."""


# ---------------------------------------------------------------------
# Data errors (CLI exit code 3)
# ---------------------------------------------------------------------


class ValidationError(ClusterBootError):
    """A sample container violates one of its invariants."""


class NonFinite(ValidationError):
    """A value in the sample is NaN or infinite."""

    def __init__(self, index):
        self.index = tuple(index)
        super().__init__(f"non-finite value at index {self.index}")


class DimensionTooSmall(ValidationError):
    """A sample dimension is below its minimum size."""

    def __init__(self, which: str, size: int, minimum: int):
        self.which = which
        super().__init__(f"dimension {which!r} has size {size}, needs >= {minimum}")


class DuplicateMaskEntry(ValidationError):
    """The same (row, col) pair appears twice in an observation mask."""

    def __init__(self, pair):
        self.pair = tuple(pair)
        super().__init__(f"mask lists {self.pair} more than once")


class EmptyMask(ValidationError):
    """An observation mask covers no cells, or leaves a row/column empty."""


class SchemaError(ValidationError):
    """An input file does not match the expected long-format schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class IoError(ClusterBootError):
    """An input or output path could not be read or written."""


# ---------------------------------------------------------------------
# Numeric degeneracies (CLI exit code 4)
# ---------------------------------------------------------------------


class NumericError(ClusterBootError):
    """A numerically degenerate configuration of the data."""


class DegenerateDesign(NumericError):
    """The design leaves no degrees of freedom for the residual scale."""


class SingularJacobian(NumericError):
    """The weighted Jacobian of the estimating equations is not invertible."""


class MomentEvaluationFailure(NumericError):
    """A moment function returned non-finite values."""
