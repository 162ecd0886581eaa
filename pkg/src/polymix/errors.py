"""Exception types raised across the package."""


class PolymixError(Exception):
    """Base class for all library errors."""


class ContractError(PolymixError, ValueError):
    """An argument violated an operation's preconditions."""


class FormatError(PolymixError):
    """A file could not be parsed (malformed header, truncated data)."""


class UnsupportedFormatError(FormatError):
    """A well-formed WAV file uses an encoding we do not decode."""


class SilentClipError(PolymixError):
    """RMS normalization was requested on an all-zero clip."""


class ValidationError(PolymixError, ValueError):
    """A manifest record carries an unknown token or bad field."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptStoreError(FormatError):
    """A feature store or checkpoint failed its integrity checks."""


class OutOfRangeError(PolymixError, ValueError):
    """A shift amount or stretch ratio lies outside the supported range."""


class NoTempoError(PolymixError):
    """The onset envelope is flat, so no tempo can be estimated."""


class StratificationError(PolymixError, ValueError):
    """A class has fewer samples than folds."""


class ConfigError(PolymixError, ValueError):
    """A model configuration cannot be built."""


class TooShortError(PolymixError, ValueError):
    """A track is shorter than one analysis segment."""


class NonFiniteError(PolymixError, FloatingPointError):
    """A forward pass produced NaN or inf."""

    def __init__(self, layer):
        super().__init__(f"non-finite activations produced by layer {layer!r}")
        self.layer = layer
