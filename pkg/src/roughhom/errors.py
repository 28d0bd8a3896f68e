"""Exception hierarchy shared by all submodules."""


class RoughHomError(Exception):
    """Base class for library errors."""


class InvalidOperatorError(RoughHomError, ValueError):
    """Operator has the wrong shape or non-finite entries."""


class InputError(RoughHomError, ValueError):
    """An argument violates a documented precondition."""


class StabilityError(RoughHomError, ValueError):
    """Generator has an eigenvalue with nonnegative real part."""


class AssumptionViolationError(RoughHomError, ValueError):
    """A structural assumption on the generator or noise fails."""


class GridError(RoughHomError, ValueError):
    """Time grids are not nested or do not match."""


class SewingDivergenceError(RoughHomError, ArithmeticError):
    """Dyadic refinement of a germ does not settle."""


class DivergenceError(RoughHomError, ArithmeticError):
    """A time integrator blew up.

    Attributes
    ----------
    time : float
        Time at which the blow-up was detected.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ConfigError(RoughHomError, ValueError):
    """Experiment configuration failed validation."""
