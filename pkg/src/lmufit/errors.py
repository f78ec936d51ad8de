class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class FormatError(ValueError):
    """A binary file does not follow its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(RuntimeError):
    """An operation was called before the state it relies on exists."""
