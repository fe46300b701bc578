"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
data problems exit 3 and numeric failures exit 4.
"""


class DrySvsError(Exception):
    exit_code = 1


class ConfigError(DrySvsError):
    exit_code = 2


class DataError(DrySvsError):
    exit_code = 3


class NumericError(DrySvsError):
    exit_code = 4


class AudioFileNotFound(DataError, FileNotFoundError):
    pass


class WavHeaderError(DataError):
    """RIFF/WAVE header is malformed."""


class WavPayloadError(DataError):
    """Sample payload is shorter than the header claims."""


class UnsupportedEncodingError(DataError):
    pass


class ManifestError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(DataError):
    pass


class ShapeError(ValueError):
    pass


class ClippingWarning(UserWarning):
    pass
