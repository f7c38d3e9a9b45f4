"""Exception types shared across the package."""


class KslabError(Exception):
    """Base class for all package errors."""


class DomainError(KslabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(KslabError, ValueError):
    """Invalid configuration. Carries a list of individual error messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(KslabError, RuntimeError):
    """A linear solve failed to converge. Carries the achieved residual."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (achieved residual {residual:.3e})"
        super().__init__(message)


class FormatError(KslabError, ValueError):
    """Malformed on-disk artifact (snapshot, CSV, summary)."""
