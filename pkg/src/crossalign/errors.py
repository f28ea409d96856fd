class CrossAlignError(Exception):
    """Base class for all errors raised by crossalign."""


class ValidationError(CrossAlignError, ValueError):
    """Inputs violate a documented precondition (shape, range, parameter)."""


class ImageIOError(CrossAlignError, OSError):
    """A file could not be read, decoded or written."""
