"""Semantic exception hierarchy shared across the package."""


class EosLabError(Exception):
    """Base class for all package-specific errors."""


class DomainError(EosLabError, ValueError):
    """An argument lies outside the documented domain of an operation."""


class NoRootError(EosLabError):
    """Root bracketing failed; the function is not invertible as assumed."""


class DivergenceError(EosLabError):
    """An update rule left the regime where the recursion is defined.

    Carries the step index at which the divergence occurred when known.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (at step {step})"
        super().__init__(message)
        self.step = step


class DegenerateReparamError(EosLabError):
    """The network gradient vanished, so the (p, q) state is undefined."""


class ShapeError(EosLabError, ValueError):
    """Array arguments have inconsistent shapes."""


class ConfigError(EosLabError):
    """An experiment configuration failed to parse or validate."""
