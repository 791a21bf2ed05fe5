"""Exception hierarchy shared across the package."""


class ActiveSPMError(Exception):
    """Base class for all package errors."""


class EstimationError(ActiveSPMError):
    """A covariance or scatter estimate is not positive definite."""


class ImpossibleLabelingError(ActiveSPMError):
    """The label track assigns zero probability to every state path."""

    def __init__(self, t: int):
        self.t = t
        super().__init__(f"labeling is impossible under the model at t={t}")


class StarvedStateError(ActiveSPMError):
    """A state received (numerically) no posterior mass during EM."""

    def __init__(self, state: int, mass: float):
        self.state = state
        self.mass = mass
        super().__init__(f"state {state} starved (posterior mass {mass:.3g})")


class ModelSelectionError(ActiveSPMError):
    """Every candidate number of states failed to fit."""


class InfeasibleConstraintError(ActiveSPMError):
    """Endpoint constraints of a simulated sequence cannot be met."""


class OracleError(ActiveSPMError):
    """The label oracle could not answer a query."""


class ConfigError(ActiveSPMError):
    """A configuration document is malformed or inconsistent."""


class InputDataError(ActiveSPMError, ValueError):
    """A data file (stream, labels, oracle, results) is malformed."""
