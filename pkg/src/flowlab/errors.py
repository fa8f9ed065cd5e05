"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class PreconditionError(ValueError):
    """A structural precondition does not hold (wrong schedule family, mismatched endpoints)."""


class QuadratureError(ArithmeticError):
    """A quadrature did not converge to the requested tolerance.

    Carries the tolerance actually achieved so callers can decide whether
    to retry with a finer rule.
    """

    def __init__(self, message: str, achieved_tol: float):
        super().__init__(f"{message} (achieved tolerance {achieved_tol:.3e})")
        self.achieved_tol = achieved_tol


class MixtureSizeError(ValueError):
    """A mixture operation would exceed the supported component budget."""


class StiffnessError(RuntimeError):
    """The adaptive step size underflowed; the field is too stiff at this time."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class ConfigError(ValueError):
    """An experiment configuration is invalid. Carries the offending field name."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field
