"""Exception hierarchy shared across the toolkit."""


class ApproxLabError(Exception):
    """Base class for all toolkit errors."""


class CgpParseError(ApproxLabError):
    """Raised when a `.cgp` text file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidGenomeError(ApproxLabError):
    """Raised when an operation requires a valid genome but got a broken one."""

    def __init__(self, violations):
        super().__init__("invalid genome: " + "; ".join(violations))
        self.violations = tuple(violations)


class CapExceededError(ApproxLabError):
    """Raised when an exhaustive sweep would exceed the configured input-bit cap."""


class ManifestError(ApproxLabError):
    """Raised when a circuit-library manifest is missing files or inconsistent."""


class NetworkFormatError(ApproxLabError):
    """Raised when a quantized-network or dataset file fails validation."""
