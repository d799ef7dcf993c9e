"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, scheme, weight or experiment configuration."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class CapabilityError(RuntimeError):
    """The requested evaluation is not available for this model or payoff."""


class NumericalOverflowError(ArithmeticError):
    """A simulated state became non-finite."""

    def __init__(self, message, step=None, substep=None, path=None):
        super().__init__(message)
        self.step = step
        self.substep = substep
        self.path = path


class InconclusiveResultError(RuntimeError):
    """Too few statistically resolved levels to fit a convergence order.

    The partially filled report is kept on ``report`` so callers can still
    write it out.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
