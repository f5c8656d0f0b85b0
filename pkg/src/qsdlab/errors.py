"""Exception types shared across the package."""


class QsdlabError(Exception):
    """Base class for all package errors."""


class ModelError(QsdlabError):
    """Inconsistent model construction (dimension mismatch, bad parameters)."""


class DomainError(QsdlabError):
    """Invalid domain specification or violated domain precondition."""


class SimulationError(QsdlabError):
    """Generic simulation failure."""


class BlowUpError(SimulationError):
    """Integration produced a non-finite state.

    Carries the last finite state and the step size for diagnosis.
    """

    def __init__(self, message, state=None, dt=None, t=None):
        super().__init__(message)
        self.state = state
        self.dt = dt
        self.t = t


class HorizonError(SimulationError):
    """All paths were censored at the horizon; no tail to measure."""


class MassExtinctionError(SimulationError):
    """Every particle of an interacting ensemble was killed in one step."""


class NoSurvivorsError(SimulationError):
    """Conditioning on survival failed: no path was alive at the requested time."""

    def __init__(self, message, survival_estimate=None):
        super().__init__(message)
        self.survival_estimate = survival_estimate


class GridError(QsdlabError):
    """Discretization or discrete-solver failure (coarse grid, singular generator)."""


class ConvergenceError(QsdlabError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConditioningError(QsdlabError):
    """A quantity is too small/ill-conditioned to divide by safely."""


class ConfigError(QsdlabError):
    """Malformed experiment or model configuration."""
