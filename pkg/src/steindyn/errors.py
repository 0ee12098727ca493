"""Exception hierarchy shared by every module."""


class SteinDynError(Exception):
    """Base class for all package errors."""


class ContractError(SteinDynError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(SteinDynError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NumericalError(SteinDynError, ArithmeticError):
    """A quadrature or fit did not reach its tolerance."""

    def __init__(self, message, achieved=None):
        self.achieved = achieved
        super().__init__(message if achieved is None else f"{message} (achieved {achieved:.3g})")


class FitError(NumericalError):
    pass


class ResourceError(SteinDynError, MemoryError):
    """Requested computation exceeds a configured size limit."""
