"""Exception types raised by the pcdvq library.

The CLI maps each family onto a process exit code (see ``pcdvq.cli``).
"""


class PCDVQError(Exception):
    """Base class for all library errors."""


class ValidationError(PCDVQError, ValueError):
    """A parameter or input violates an operation's preconditions."""


class DimensionError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class DegenerateError(ValidationError):
    """Input has no well-defined direction or scale (e.g. a zero column)."""


class CapacityError(ValidationError):
    """A codebook cannot be built from the available candidates."""


class RangeError(ValidationError, IndexError):
    pass


class FormatError(PCDVQError):
    """A serialized file is malformed, truncated or of the wrong kind."""


class CodebookMismatchError(PCDVQError):
    """A quantized tensor is being decoded with codebooks it was not built with."""
