class NpivError(Exception):
    """Base class for every error raised by the estimation library."""

    exit_code: int = 2


class InputError(NpivError, ValueError):
    """Invalid arguments: bad dimensions, sizes or ranges."""


class DataValidationError(InputError):
    """A dataset or a data file failed validation."""


class StateError(NpivError, RuntimeError):
    """An object is not in the state an operation requires (e.g. missing fold labels)."""


class ContractError(NpivError):
    """A caller contract was broken, such as evaluating a nuisance on folds it was trained on."""


class NumericalError(NpivError, ArithmeticError):
    """A linear system or quadrature could not be solved to the required accuracy."""

    exit_code = 3
