"""Exception types shared across the package."""


class SubflowError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SubflowError):
    """An evaluation argument left the supported domain."""


class LawError(SubflowError):
    """A pressure law violates the required structural conditions."""


class RangeError(SubflowError):
    """A value cannot be inverted (vacuum approach or table overflow)."""


class AdmissibilityError(SubflowError):
    """The force potential leaves the admissible band of the gas law."""


class SingularityError(SubflowError):
    """Evaluation point coincides with a potential singularity."""


class GeometryError(SubflowError):
    """Invalid mesh generation parameters."""


class ParseError(SubflowError):
    """A file could not be parsed; the message carries the line number."""


class ValidationError(SubflowError):
    """A constructed or loaded object violates one of its invariants."""


class EllipticityError(SubflowError):
    """The scanned coefficient matrix lost uniform ellipticity."""


class NonConvergenceError(SubflowError):
    """The nonlinear solve hit its iteration cap; carries the last report/state."""

    def __init__(self, message, report=None, state=None):
        super().__init__(message)
        self.report = report
        self.state = state


class CurvatureError(SubflowError):
    """Conjugate gradients met nonpositive curvature (lost convexity)."""


class ScheduleError(SubflowError):
    """Invalid cut-off parameter schedule for the continuation."""


class FitError(SubflowError):
    """A least-squares fit has nothing to fit against."""


class ConfigError(SubflowError):
    """Run configuration is invalid; the message names the offending key."""


class IoError(SubflowError):
    """Failed to write an output artifact."""
