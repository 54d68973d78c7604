"""Exception hierarchy shared by all modules."""


class LaserError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(LaserError, ValueError):
    """Malformed configuration or violated configuration precondition."""


class DomainError(LaserError, ValueError):
    """Argument outside the domain of a physical formula."""


class ScheduleError(LaserError, ValueError):
    """Field schedule evaluated outside its time range or inconsistent."""


class CheckFailure(LaserError):
    """A hard preflight check failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(LaserError):
    """Base class for failures of the numerical solvers."""


class DivergenceError(NumericalError):
    """Iteration diverged (non-confining potential, blow-up)."""


class ConvergenceError(NumericalError):
    """Tolerance not reached within the iteration budget."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class StepSizeUnderflow(NumericalError):
    """Adaptive step size fell below the allowed minimum."""

    def __init__(self, message, t=None, dt=None):
        super().__init__(message)
        self.t = t
        self.dt = dt


class NonFiniteState(NumericalError):
    """NaN or infinity detected in a propagated field."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_NUMERICAL = 4


def exit_code_for(exc):
    """Map an exception to the CLI exit code."""
    if isinstance(exc, CheckFailure):
        return EXIT_CHECK
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, DomainError, ScheduleError)):
        return EXIT_CONFIG
    return 1
