"""Exception hierarchy shared across the package.

Every error carries a short category string and a process exit code so the
CLI can map failures onto distinct nonzero statuses.
"""


class TdvcError(Exception):
    category = "error"
    exit_code = 1


class DomainError(TdvcError, ValueError):
    """Invalid argument values or inconsistent shapes."""

    category = "domain"
    exit_code = 3


class FormatError(TdvcError):
    """Malformed input file (bad magic, impossible header fields)."""

    category = "format"
    exit_code = 4


class UnsupportedVersionError(FormatError):
    category = "version"
    exit_code = 4


class UnsupportedFormatError(FormatError):
    """Recognized but unsupported input flavour (e.g. color PGM)."""

    category = "unsupported-format"
    exit_code = 4


class BitstreamError(TdvcError):
    """Truncated or corrupt coded payload."""

    category = "bitstream"
    exit_code = 5

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ConvergenceError(TdvcError):
    """Numerical failure inside the decomposition solver."""

    category = "convergence"
    exit_code = 6


class ExternalToolError(TdvcError):
    """External encoder bridge failed (missing binary, nonzero exit)."""

    category = "external-tool"
    exit_code = 7


class ResourceError(TdvcError):
    """Operation would exceed a configured resource budget."""

    category = "resource"
    exit_code = 8
