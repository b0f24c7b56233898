"""Exception hierarchy shared by all modules."""


class CBOError(Exception):
    """Base class for every error raised by this package."""


class EmptyEnsembleError(CBOError, ValueError):
    pass


class InvalidObjectiveError(CBOError, ValueError):
    """An objective returned a non-finite value."""


class DegenerateDensityError(CBOError, ValueError):
    pass


class DivergedRunError(CBOError, FloatingPointError):
    """A particle left the finite range during a time step."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite particle position after step {step}")


class StepSizeError(CBOError, ValueError):
    """Time step violates the CFL restriction."""


class SolverError(CBOError, RuntimeError):
    """Linear solve failed or did not reach the residual target."""

    def __init__(self, message: str, condition_estimate: float | None = None):
        self.condition_estimate = condition_estimate
        if condition_estimate is not None:
            message = f"{message} (condition estimate {condition_estimate:.3e})"
        super().__init__(message)


class PositivityError(CBOError, RuntimeError):
    pass


class NonConvergenceError(CBOError, RuntimeError):
    """Mean-field iteration hit its iteration guard before the stopping rule."""

    def __init__(self, message: str, diagnostics: dict | None = None, partial=None):
        self.diagnostics = diagnostics or {}
        self.partial = partial
        super().__init__(message)


class ConfigError(CBOError, ValueError):
    pass


class AggregationError(CBOError, ValueError):
    pass
