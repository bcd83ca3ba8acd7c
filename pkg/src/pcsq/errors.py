"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (see pcsq.cli).
"""


class PcsqError(Exception):
    """Base class for all package errors."""


class ConfigError(PcsqError):
    """Invalid configuration document, flag, or argument."""


class IngestError(PcsqError):
    """Malformed input data (CSV rows, binary core files, edge lists)."""


class NumericError(PcsqError):
    """NaN encountered, log of an exact zero, or a non-finite quantity
    where a finite one is required."""


class DomainError(NumericError):
    """Input point outside a family's domain (e.g. beyond spline knots)."""


class DegenerateModelError(PcsqError):
    """Partition function is zero or otherwise unusable as a normalizer."""


class UnsupportedStructureError(PcsqError):
    """Operation requires a structural property the circuit lacks."""


class PreconditionError(PcsqError):
    """Caller violated a documented operation precondition."""
