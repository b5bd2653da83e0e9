"""Exception hierarchy. CLI exit codes are attached to each class."""


class MusicError(Exception):
    exit_code = 1


class ConfigError(MusicError, ValueError):
    """Shapes, sizes or settings that do not fit together."""

    exit_code = 1


class UsageError(MusicError, ValueError):
    """An API called outside its preconditions."""

    exit_code = 1


class CheckpointError(MusicError):
    """Unreadable, truncated or version-mismatched checkpoint file."""

    exit_code = 1


class NumericError(MusicError, FloatingPointError):
    """A non-finite loss or parameter during training.

    ``breakdown`` carries the last loss breakdown so callers can dump it.
    """

    exit_code = 2

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


class VerificationError(MusicError):
    exit_code = 3
