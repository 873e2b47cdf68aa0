"""Exception types shared across the package."""


class DistreamError(Exception):
    """Base class for every error raised by distream."""


class DimensionError(DistreamError, ValueError):
    pass


class PreconditionError(DistreamError, ValueError):
    pass


class OrderingError(DistreamError, ValueError):
    """A point arrived with a timestamp older than the engine clock."""


class EmptyStateError(DistreamError):
    pass


class EpochError(DistreamError, ValueError):
    pass


class CardinalityError(DistreamError, ValueError):
    pass


class AssignmentError(DistreamError, KeyError):
    pass


class FormatError(DistreamError, ValueError):
    """Bad magic, bad version or otherwise malformed frame."""


class LengthError(FormatError):
    pass


class ValidationError(DistreamError, ValueError):
    """Decoded payload violates a value invariant."""


class ProtocolError(DistreamError):
    pass


class ParseError(DistreamError, ValueError):
    pass
