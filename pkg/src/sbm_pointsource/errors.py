"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain of a kernel or operator."""


class MagnitudeOverflowError(ArithmeticError):
    """A value is too large to represent as a double.

    ``exponent`` holds the natural log of the offending magnitude so callers
    can fall back to a log-space representation.
    """

    def __init__(self, message, exponent):
        super().__init__(f"{message} (log-magnitude {exponent:.6g})")
        self.exponent = float(exponent)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved abs error {achieved:.3g})")
        self.achieved = float(achieved)


class ConsistencyError(RuntimeError):
    """Two independent evaluation routes disagree beyond tolerance."""


class ConfigError(ValueError):
    """A JSON configuration or object description failed validation."""
