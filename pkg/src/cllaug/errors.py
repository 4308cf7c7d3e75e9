"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file could not be parsed.

    ``offset`` is the byte offset (binary formats) or ``(row, column)``
    position (text formats) where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class GenerationError(RuntimeError):
    """Complementary labels could not be drawn for an instance."""

    def __init__(self, message, instance=None):
        super().__init__(message)
        self.instance = instance


class StaleCacheError(RuntimeError):
    """A forward cache was used after the model parameters changed."""
