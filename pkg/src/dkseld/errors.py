"""Exception hierarchy shared by every dkseld module."""


class SeldError(Exception):
    """Base class for all library errors."""


class FormatError(SeldError):
    """Malformed or truncated file content."""


class UnsupportedFormatError(SeldError):
    """Well-formed file using an encoding we do not handle."""


class ValidationError(SeldError):
    """A value is outside its documented range."""


class DimensionError(SeldError, ValueError):
    """Array shapes or axis arguments do not conform."""


class ConfigurationError(SeldError, ValueError):
    """Invalid hyper-parameter or configuration value."""


class ContractError(SeldError, RuntimeError):
    """An API was used outside its call protocol."""


class UndefinedDirectionError(SeldError, ValueError):
    """A direction was requested for a zero-length vector."""


class SchedulingError(SeldError):
    """Event schedule violates the polyphony limit."""


class EmptyInputError(SeldError, ValueError):
    """Input too short to produce any output frame."""
