"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConvergenceError(RuntimeError):
    """An iterative evaluation did not converge within its iteration budget."""


class InfiniteMomentError(DomainError):
    """A requested moment does not exist for the given tail index."""


class NullEventError(DomainError):
    """Conditioning on an event of probability zero."""


class InstabilityError(RuntimeError):
    """The offered load meets or exceeds capacity; no finite estimate exists."""

    def __init__(self, message, rho=None, partial=None):
        super().__init__(message)
        self.rho = rho
        self.partial = partial


class NonFiniteGradientError(RuntimeError):
    """A training step produced a non-finite gradient."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
