"""Exception types shared across the package."""


class UnknownPromptError(KeyError):
    """Raised when a prompt is not registered in the world."""


class ConfigError(ValueError):
    """Raised for invalid run or guidance configuration."""


class NumericsError(RuntimeError):
    """Raised when a computation produces non-finite values.

    Carries enough context (step index, time) to locate the failure.
    """

    def __init__(self, message: str, *, step: int | None = None, t: float | None = None):
        if step is not None:
            message = f"{message} (step={step}, t={t})"
        super().__init__(message)
        self.step = step
        self.t = t
