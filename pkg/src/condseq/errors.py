"""Exception taxonomy shared across the toolkit."""


class CondseqError(Exception):
    """Base class for all condseq errors."""


class DimensionError(CondseqError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(CondseqError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class InputError(CondseqError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class ContractError(CondseqError, RuntimeError):
    """An internal API contract was violated."""


class GradientStateError(ContractError):
    """Backward invoked on a graph whose leaf gradients were not reset."""


class ConfigError(CondseqError, ValueError):
    """Bad configuration key or value."""


class ParseError(CondseqError, ValueError):
    """A serialized artifact could not be parsed.

    Carries the 1-based line number when the format is line oriented.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
