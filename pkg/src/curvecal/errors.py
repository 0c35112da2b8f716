"""Exception hierarchy shared across the package."""


class CurveCalError(Exception):
    """Base class for all package errors."""


class ConfigError(CurveCalError):
    """Invalid or inconsistent configuration (bad ranges, unknown keys, ...)."""


class DomainError(CurveCalError, ValueError):
    """Input outside an operation's physical or mathematical domain."""


class ContaminationError(CurveCalError):
    """A no-load capture contained frames with non-negligible applied force."""


class DegenerateDataError(CurveCalError):
    """Data cannot support the requested computation (rank deficiency, empty sets, ...)."""


class ProtocolError(CurveCalError):
    """Session stream violated protocol rules (time regression, malformed message)."""
