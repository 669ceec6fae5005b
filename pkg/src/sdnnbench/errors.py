"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes, so raising the right class
matters more than the message text.
"""


class SdnnError(Exception):
    """Base class for all package errors."""


class ParameterError(SdnnError):
    """Invalid parameter or parameter combination (CLI exit 2)."""


class FormatError(SdnnError):
    """Malformed file: bad magic, truncation, bad line syntax (CLI exit 3)."""


class ParseError(FormatError):
    """Text parse failure; carries a 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ChecksumError(FormatError):
    """Binary container payload does not match its checksum."""


class VersionError(FormatError):
    """Binary container version is not supported."""


class BoundsError(SdnnError):
    """Index outside the declared matrix extent (CLI exit 3 at I/O, 4 in core)."""


class DuplicateError(SdnnError):
    """Duplicate (row, col) coordinate in triple input."""


class ShapeError(SdnnError):
    """Dimension mismatch between operands (CLI exit 4)."""


class CapacityError(SdnnError):
    """Instance exceeds what this code path is willing to handle."""
