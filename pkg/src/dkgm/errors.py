"""Exception types shared across the package."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value.

    ``state`` carries the last finite state when one is available so that
    callers can inspect where a run diverged.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of a formula."""


class ConfigError(ValueError):
    """Malformed or invalid run configuration text."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
