"""Exception types raised by the package."""


class UnshuffleError(Exception):
    """Base class for recovery failures."""


class EmptySupportError(UnshuffleError):
    """Stability selection kept no dictionary column."""


class RankDeficientError(UnshuffleError, ValueError):
    """A design or sensing matrix lacks full column rank."""


class EnumerationCapError(ValueError):
    """A brute-force enumeration would exceed its configured cap."""


class TraceFormatError(ValueError):
    """Malformed traces file.  `lineno` is 1-based, or None for file-level errors."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)
