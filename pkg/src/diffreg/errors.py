"""Exception types shared across the package."""


class DiffregError(Exception):
    """Base class for all package errors."""


class SizeError(DiffregError):
    """Extent/length constraint violated (zero extents, data/shape mismatch, undersized inputs)."""


class ShapeError(DiffregError):
    """Operands have incompatible shapes."""


class ParameterError(DiffregError):
    """A parameter is outside its documented range."""


class FormatError(DiffregError):
    """A file could not be parsed (bad magic, truncated data, invalid header)."""


class ConfigError(DiffregError):
    """Registration configuration is invalid (unknown keys, missing fields, bad values)."""


class DegenerateInputError(DiffregError):
    """Input is degenerate for the requested computation (empty mask, zero variance, zero mass)."""


class ContractError(DiffregError):
    """An API precondition was violated by the caller."""


class EvaluationError(DiffregError):
    """A numeric evaluation produced a non-finite result where finiteness is required."""


class DivergenceError(DiffregError):
    """The optimization produced a non-finite objective."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
