"""Exception hierarchy shared by every module."""


class MrdacError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(MrdacError, ValueError):
    """Shapes or lengths of the inputs do not agree."""


class InvalidInputError(MrdacError, ValueError):
    """An input value is outside the domain of the operation."""


class ParseError(MrdacError):
    """A bitstream or payload could not be decoded.

    ``bit_offset`` is set when the failure can be pinned to a bit position
    inside a payload; ``record`` names the offending record when known.
    """

    def __init__(self, message, bit_offset=None, record=None):
        parts = [message]
        if record is not None:
            parts.append(f"record={record}")
        if bit_offset is not None:
            parts.append(f"bit_offset={bit_offset}")
        super().__init__(" ".join(parts))
        self.bit_offset = bit_offset
        self.record = record


class UnsupportedVersionError(ParseError):
    """The container declares a version this decoder does not know."""


class NoOverlapError(MrdacError, ValueError):
    """Two RD curves share no common quality interval."""


class DivergenceError(MrdacError, RuntimeError):
    """An optimisation produced a non-finite loss."""

    def __init__(self, step):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step
