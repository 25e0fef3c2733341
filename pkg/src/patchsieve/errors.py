"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: usage errors -> 1, input/format
errors -> 2, numerical failures -> 3.
"""


class PatchSieveError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 2


class UsageError(PatchSieveError):
    """Bad invocation: unknown flags, missing arguments, invalid combinations."""

    exit_code = 1


class InputFormatError(PatchSieveError):
    """An input file or payload does not match its declared format."""

    exit_code = 2


class MagicMismatchError(InputFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(InputFormatError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(InputFormatError):
    """File ends before the declared payload is complete."""


class DuplicateIdError(InputFormatError):
    """Identifier list contains repeated entries."""


class NumericalError(PatchSieveError):
    """A numerical procedure cannot produce a valid result (degenerate input)."""

    exit_code = 3
