"""Exception types shared across the package."""


class TbnError(Exception):
    """Base class for all package errors."""


class FormatError(TbnError):
    """Malformed file, record, or internally inconsistent encoding."""


class ConfigError(TbnError):
    """Invalid network, accelerator, or run configuration."""


class PartialSumOverflow(TbnError):
    """A conv/FC accumulation left the signed 16-bit range."""


class CalibrationError(TbnError):
    """A threshold search could not reach the requested density."""


class OracleMismatch(TbnError):
    """The simulator disagreed with the golden model."""
