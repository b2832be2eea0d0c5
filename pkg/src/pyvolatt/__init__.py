from art import tprint

from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    NumericError,
    ParseError,
    PyvolattError,
)
from .tensor import Tape, Tensor, set_default_dtype
from .attention import VAParams, VAStack, va_forward
from .volume import Volume, read_volume, write_volume


def banner():
    """Prints the pyvolatt banner"""
    tprint("pyvolatt", "tarty4")
