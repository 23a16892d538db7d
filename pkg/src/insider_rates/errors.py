"""Exception hierarchy shared by every module of the package."""


class InsiderRatesError(Exception):
    """Base class for all library errors."""


class DomainError(InsiderRatesError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularTime(InsiderRatesError, ValueError):
    """Evaluation requested at (or numerically too close to) the terminal time."""


class NonConvergence(InsiderRatesError, ArithmeticError):
    """Quadrature refinement did not reach the requested tolerance."""


class NonFinite(InsiderRatesError, ArithmeticError):
    """A simulated path produced a non-finite log-wealth."""


class BoundViolation(InsiderRatesError, ArithmeticError):
    """A directly computed integral exceeds its analytic upper bound.

    ``certificate`` holds the failing certificate when one was built.
    """

    def __init__(self, message: str, certificate=None) -> None:
        super().__init__(message)
        self.certificate = certificate


class ConfigError(InsiderRatesError, ValueError):
    """An experiment configuration failed validation."""
