"""Exceptions raised by pyvolatt.

Every exception carries an ``exit_code`` which the command line interface
returns unchanged, so scripts can tell input problems (2) from numeric
failures (3).
"""


class PyvolattError(Exception):
    """Base class of all pyvolatt errors."""

    exit_code = 2


class DimensionError(PyvolattError, ValueError):
    """Tensor, mask or volume shapes do not agree."""

    def __init__(self, message: str, *shapes) -> None:
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = shapes


class ContractError(PyvolattError, ValueError):
    """A precondition of an operation was violated."""


class ConfigurationError(PyvolattError, ValueError):
    """An invalid configuration value was supplied."""


class ParseError(PyvolattError, ValueError):
    """A file header could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.

    offset : int
        The byte offset in the file at which parsing failed.
    """

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericError(PyvolattError, ArithmeticError):
    """A NaN or infinite value was produced.

    Parameters
    ----------
    message : str
        Description of the problem.

    op : str, optional
        The name of the operation that produced the value.

    epoch : int, optional
        The training epoch during which the value was produced.
    """

    exit_code = 3

    def __init__(self, message: str, op: str = None, epoch: int = None) -> None:
        prefix = []
        if op is not None:
            prefix.append(f"op '{op}'")
        if epoch is not None:
            prefix.append(f"epoch {epoch}")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)
        self.op = op
        self.epoch = epoch
