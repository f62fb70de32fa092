"""Exception hierarchy shared by all modules."""


class EmdiniError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EmdiniError, ValueError):
    """Invalid parameters, unknown names or incompatible grids."""


class NumericError(EmdiniError, ArithmeticError):
    """A numeric routine produced or was fed a non-finite value."""


class ModelDefinitionError(NumericError):
    """A coefficient function returned a non-finite value."""

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class SimulationBlowup(NumericError):
    """An Euler-Maruyama path left the finite range."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class InterpolationError(EmdiniError, ValueError):
    """Requested a time at which no Brownian value is available."""


class InsufficientDataError(EmdiniError, ValueError):
    """Too few usable rows for a regression."""


class DiscretizationError(NumericError):
    """The finite-difference system lost diagonal dominance."""


class ExperimentFailure(EmdiniError, RuntimeError):
    """Every replica of some row was excluded."""
