"""Exception hierarchy."""


class RdsysError(Exception):
    """Base class for all package errors."""


class UsageError(RdsysError, ValueError):
    """A call violated a documented precondition."""


class ConfigurationError(RdsysError, ValueError):
    """A model, claim or run configuration is inconsistent."""


class ModelDefinitionError(RdsysError):
    """A coefficient function produced an invalid value."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SimulationError(RdsysError):
    """A simulated path became non-finite or left the domain too often."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EstimationError(RdsysError):
    """A Monte Carlo estimate could not be formed for some node."""


class NumericalError(RdsysError):
    """A deterministic solve failed (singular system, step divergence)."""

    def __init__(self, message, time_index=None):
        super().__init__(message)
        self.time_index = time_index


class ConvergenceError(RdsysError):
    """Fixed-point iteration did not reach tolerance; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegeneracyError(RdsysError):
    """A hedge ratio is undefined because its denominator vanishes."""
