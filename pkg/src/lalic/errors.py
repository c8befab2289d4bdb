"""Exception hierarchy shared across the codec.

Each error class maps to one process exit code so the command line tool can
report failures in a scriptable way.
"""


class LalicError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ShapeError(LalicError):
    """An array argument has the wrong rank, extent, or channel count."""

    exit_code = 1


class FormatError(LalicError):
    """A file is not in the expected container format (bad magic, version,
    or malformed structure)."""

    exit_code = 3


class CorruptionError(LalicError):
    """A container parsed correctly but its payload is damaged: truncated
    data, checksum failure, or an undecodable symbol stream."""

    exit_code = 4


class ConfigMismatchError(LalicError):
    """Weights, bitstream, and configuration disagree with each other."""

    exit_code = 5


IO_EXIT_CODE = 2
