"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario or model configuration violates an invariant.

    Carries a list of (field_path, message) pairs in ``violations`` when
    raised by the config loader, so callers can report every problem at once.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a usable result."""


class ContractViolation(RuntimeError):
    """A caller broke a documented precondition."""
