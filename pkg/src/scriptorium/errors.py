"""Exception hierarchy. CLI maps ScriptoriumError to exit code 1."""


class ScriptoriumError(Exception):
    """Base class for all domain errors raised by this package."""


class ValidationError(ScriptoriumError):
    """An invariant was violated at construction or load time."""


class ParseError(ScriptoriumError):
    """Malformed input document; carries a line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class FormatError(ScriptoriumError):
    """A value cannot be serialized in the requested format."""


class ProtocolError(ScriptoriumError):
    """A detector wire message violated the protocol."""


class DetectorFailure(ScriptoriumError):
    """The detector crashed, timed out, or returned a malformed ack."""


class LeakageError(ScriptoriumError):
    """Test-set labels or images were about to leak into training."""
