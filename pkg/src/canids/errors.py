"""Exception taxonomy shared across the package.

Every error carries a short machine-readable ``category`` so the CLI can
emit a single parsable line and pick the right exit code.
"""


class CanidsError(Exception):
    category = "runtime"


class ParseError(CanidsError):
    """Malformed input data (bad CSV row, bad cache record)."""

    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(CanidsError):
    """Invalid configuration or parameter value."""

    category = "config"


class DimensionError(CanidsError):
    """Tensor shape mismatch; names the op and the offending shapes."""

    category = "dimension"


class StateError(CanidsError):
    """Operation invoked in the wrong state (missing checkpoint, empty input)."""

    category = "state"


class UsageError(CanidsError):
    """Bad CLI invocation: missing file, malformed flag value."""

    category = "usage"
