"""Exception types shared across the toolkit.

Every error carries the process exit code the CLI maps it to:
1 usage/config, 2 data/format, 3 numeric failure.
"""


class RDGANError(Exception):
    exit_code = 1


class ShapeError(RDGANError, ValueError):
    """Operand extents incompatible with an operation."""


class ConfigError(RDGANError, ValueError):
    """Invalid or inconsistent configuration."""


class InputError(RDGANError, ValueError):
    """Rejected user input (empty caption, zero-extent frame, ...)."""


class UsageError(RDGANError, ValueError):
    """API misuse (backward on a non-scalar, no tape, ...)."""


class TransplantError(RDGANError, ValueError):
    """Weight transplant failed; message names the parameter path."""


class FormatError(RDGANError, ValueError):
    """Malformed file: bad magic, version, truncation, or checksum."""

    exit_code = 2


class DataError(RDGANError, ValueError):
    """Missing or unusable data on disk."""

    exit_code = 2


class NumericError(RDGANError, RuntimeError):
    """Non-finite values or a failed numeric check."""

    exit_code = 3
