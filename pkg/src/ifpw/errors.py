"""Exception types shared across the package."""


class StabilityError(ValueError):
    """Queue parameters violate lambda < n * mu."""


class CalibrationError(ValueError):
    """Kernel calibration data is underdetermined or unusable."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge; carries the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateDataError(ValueError):
    """Statistic is undefined for the given data (e.g. zero variance)."""


class ConfigurationError(ValueError):
    """Scenario configuration is inconsistent or violates a precondition."""


class NumericalBlowupError(RuntimeError):
    """Integration produced NaN/overflow or a large negative density."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class FrontNotFoundError(RuntimeError):
    """A wave front crossing could not be located in a snapshot."""

    def __init__(self, message, side=None):
        super().__init__(message)
        self.side = side


class InsufficientRunError(RuntimeError):
    """The run is too short for the requested measurement (no plateau)."""
