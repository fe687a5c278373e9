"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto exit codes:
``ConfigError`` -> 2, ``DataError`` -> 3, ``NumericError`` -> 4.
"""


class MvrppgError(Exception):
    """Base class for all package errors."""


class ConfigError(MvrppgError, ValueError):
    """Invalid parameter or configuration value."""


ParameterError = ConfigError


class InvalidSignalError(ConfigError):
    """Signal contains non-finite samples or is too short."""


class NumericError(MvrppgError, ArithmeticError):
    """A computation produced an unusable numeric result."""


class DegenerateSignalError(NumericError):
    """Zero-variance input where a normalised quantity was requested."""


class NoPulseError(NumericError):
    """No spectral power inside the heart-rate band."""


class GraphError(ConfigError):
    """Shape mismatch while assembling a network computation."""


class DataError(MvrppgError, IOError):
    """Dataset container could not be read."""


class CorruptHeaderError(DataError):
    pass


class TruncatedPayloadError(DataError):
    pass


class VersionMismatchError(DataError):
    pass


class MissingFileError(DataError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = str(path)
