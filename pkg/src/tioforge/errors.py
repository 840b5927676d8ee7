"""Shared exception types.

Every failure mode callers are expected to distinguish gets its own class;
generic programming errors stay as plain ValueError/TypeError.
"""


class TioForgeError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(TioForgeError):
    """Operand shapes are incompatible for the requested operation."""


class PoolError(ShapeError):
    """Pooled extent is not divisible by the pooling factor."""


class ParameterError(TioForgeError):
    """A numeric parameter is outside its documented domain."""


class ContractError(TioForgeError):
    """A documented precondition was violated."""


class NumericError(TioForgeError):
    """A computation produced or encountered non-finite values."""


class ConfigError(TioForgeError):
    """A configuration value or combination is invalid."""


class GeometryError(TioForgeError):
    """Invalid geometric input (e.g. a non-orthonormal rotation matrix)."""


class AlignmentError(GeometryError):
    """Rigid alignment is underdetermined or otherwise impossible."""


class AssociationError(GeometryError):
    """No trajectory pose pairs could be associated in time."""


class DependencyError(TioForgeError):
    """A required upstream artifact (checkpoint, dataset) is missing."""


class CompatibilityError(TioForgeError):
    """Artifacts built from mismatched configurations were combined."""
