"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (shape, finiteness, range)."""


class ConfigurationError(ValueError):
    """An environment or experiment configuration is invalid."""


class UnsupportedConfiguration(ConfigurationError):
    """The configuration is valid but not supported by the requested operation."""


class NumericalError(ArithmeticError):
    """A linear solve failed even after jitter escalation."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
