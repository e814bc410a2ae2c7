"""Exception types shared across the package."""


class KvPackError(Exception):
    """Base class for all kvpack errors."""


class RequestTooLarge(KvPackError):
    """A request's KV footprint exceeds a single GPU's capacity."""


class NotPlaced(KvPackError):
    """The request is not placed on any GPU."""


class NoCategory(KvPackError):
    """A GPU with no residents has no size category."""


class ConfigError(KvPackError):
    """Invalid or incomplete configuration."""


class ParseError(KvPackError):
    """A trace file row failed to parse.

    Carries the 1-based line number of the offending row.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
