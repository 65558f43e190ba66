"""Exception hierarchy shared by every module of the package."""


class EdenError(Exception):
    """Base class for all package errors."""


class DimensionError(EdenError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(EdenError, ValueError):
    """A precondition other than a shape mismatch was violated."""


class TapeError(ContractError):
    """Misuse of the differentiation tape (e.g. a second backward)."""


class NumericError(EdenError, ArithmeticError):
    """NaN or infinite values where finite ones are required."""


class TrainingError(NumericError):
    """Training diverged."""


class ConfigError(EdenError, ValueError):
    """Invalid model configuration."""


class WeightsFormatError(EdenError, ValueError):
    """A weights file could not be parsed or does not match its config."""
