"""Exception hierarchy shared across the simulator."""


class SplitLLMError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SplitLLMError):
    """Operand dimensions are incompatible with the requested operation."""


class ConfigError(SplitLLMError):
    """A configuration value or parameter violates its constraints."""


class DataError(SplitLLMError):
    """Input data (samples, labels, dataset files) failed validation."""


class ProtocolError(SplitLLMError):
    """A message or cache was used out of order, twice, or not at all."""


class NumericError(SplitLLMError):
    """A public operation produced a non-finite value."""


class FormatError(SplitLLMError):
    """A binary snapshot or wire buffer is malformed."""
