"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ContractError(ValueError):
    """A documented precondition or postcondition was violated."""


class FormatError(ValueError):
    """A binary or text artifact is malformed."""


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss.

    ``diagnostics`` holds the step index, loss values and max |grad|.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
