"""Exception hierarchy shared across the package."""

from __future__ import annotations


class S2SError(Exception):
    """Base class for all package errors."""


class ParseError(S2SError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(S2SError, ValueError):
    pass


class DuplicateKeyError(S2SError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class UnknownLabelError(S2SError, KeyError):
    def __init__(self, token: str, label: str | None = None):
        self.token = token
        self.label = label
        msg = f"unknown token {token!r}"
        if label is not None and label != token:
            msg += f" in label {label!r}"
        super().__init__(msg)

    def __str__(self) -> str:
        return str(self.args[0])


class CapacityError(S2SError, ValueError):
    pass


class FormatError(S2SError):
    pass


class ConsistencyError(S2SError):
    pass


class SplitError(S2SError, ValueError):
    pass


class GenerationError(S2SError):
    pass


class ConfigurationError(S2SError, ValueError):
    pass


class NumericError(S2SError, ArithmeticError):
    pass


class SamplingError(S2SError):
    pass


class LossError(S2SError, ValueError):
    pass


class DivergenceError(S2SError):
    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")


class ProtocolError(S2SError, ValueError):
    pass
