"""Exception types shared across the package."""


class PerfhomError(Exception):
    """Base class for all package errors."""


class ConfigError(PerfhomError, ValueError):
    """Invalid configuration. ``field`` names the offending entry when known."""

    def __init__(self, message, field=None, violations=None):
        super().__init__(message)
        self.field = field
        self.violations = list(violations) if violations else [message]


class GeometryResolutionError(ConfigError):
    """Hole radius not resolvable on the requested grid."""


class DomainError(PerfhomError, ValueError):
    pass


class SolverError(PerfhomError, RuntimeError):
    """Linear solve or time step failed. Carries the solver report if any."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConsistencyError(PerfhomError, RuntimeError):
    """Two routes to the same quantity disagree beyond tolerance."""


class InvariantError(PerfhomError, AssertionError):
    pass
