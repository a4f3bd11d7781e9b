"""Exception hierarchy.

Validation-type errors (bad shapes, configs, annotations, files) map to
CLI exit status 1; everything else that escapes a command maps to 2.
"""


class RepcountError(Exception):
    """Base class for all package errors."""


class ValidationError(RepcountError, ValueError):
    """Input data or annotations violate an invariant."""


class ShapeError(ValidationError):
    """Tensor or config dimensions do not agree."""


class ConfigError(ValidationError):
    """A configuration value is missing, unknown or out of range."""


class DegenerateInputError(RepcountError, ValueError):
    """An operation is undefined at this input (e.g. zero-norm cosine)."""


class InapplicableLossError(RepcountError):
    """A loss variant cannot be evaluated on this sequence."""


class GenerationError(RepcountError):
    """The synthetic generator could not lay out a sequence."""


class DivergenceError(RepcountError):
    """Training produced a non-finite loss."""
