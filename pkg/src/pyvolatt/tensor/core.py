import logging
from typing import Optional, Sequence

import numpy as np

from pyvolatt.errors import ConfigurationError, ContractError, NumericError

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = np.float64
_ACTIVE_TAPES = []


def set_default_dtype(dtype) -> None:
    """Sets the floating point type of newly created tensors.

    Double precision is the reference path; all tolerances quoted in the
    documentation assume it.

    Parameters
    ----------
    dtype : np.float64 or np.float32
        The new default dtype.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ConfigurationError(f"unsupported tensor dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A dense n-dimensional array of reals with a gradient accumulator.

    Attributes
    ----------
    data : np.ndarray
        The values, row-major.

    requires_grad : bool
        Whether gradients are accumulated into this tensor.

    grad : np.ndarray or None
        The gradient accumulator, zero on creation, with the shape of data.
        None when requires_grad is False.

    name : str, optional
        A label used in reports and checkpoints.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype=None,
    ) -> None:
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor created from non-finite values", op="tensor")
        self._init(arr, requires_grad, name)

    def _init(self, arr: np.ndarray, requires_grad: bool, name: Optional[str]):
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wraps an already validated array without copying."""
        t = cls.__new__(cls)
        t._init(arr, requires_grad, None)
        return t

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() called on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def zero_grad(params: Sequence[Tensor]) -> None:
    """Resets the gradient accumulator of every tensor in params."""
    for p in params:
        p.zero_grad()


class Tape:
    """An ordered record of executed operations.

    Operations executed while a tape is active, and which have at least one
    input requiring gradients, are appended in execution order. Backward
    traversal visits them in exact reverse order. Operations executed with no
    active tape are not recorded (inference mode).

    A tape is single-writer: one forward/backward session per tape. The
    backward pass releases the records once gradients are accumulated.

    Examples
    --------
    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = ops.sum(ops.mul(x, x))
    >>> tape.backward(loss)
    """

    def __init__(self) -> None:
        self.records = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def current() -> Optional["Tape"]:
        return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None

    def record(self, function: "Function") -> None:
        self.records.append(function)
        function.output._tape = self

    def min_kink_distance(self) -> float:
        """Returns the smallest distance of any recorded input to a point of
        non-differentiability (relu at zero, tied channel maxima)."""
        distances = [f.kink_distance() for f in self.records]
        return min(distances, default=np.inf)

    def backward(self, loss: Tensor) -> None:
        """Populates the gradient of every grad-requiring tensor in the tape
        with dLoss/dT. Gradients accumulate additively.

        Raises
        ------
        ContractError
            If the loss is not scalar, or the tape is empty.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self.records:
            raise ContractError("backward called on an empty tape")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any grad-requiring tensor")

        n_records = len(self.records)
        loss.grad = loss.grad + np.ones_like(loss.data)
        try:
            for function in reversed(self.records):
                out = function.output
                if not np.any(out.grad):
                    continue
                grads = function.backward(out.grad)
                for tensor, g in zip(function.inputs, grads):
                    if g is None or not tensor.requires_grad:
                        continue
                    if not np.all(np.isfinite(g)):
                        raise NumericError("non-finite gradient", op=function.name)
                    tensor.grad = tensor.grad + g.reshape(tensor.shape)
        finally:
            self.release()
        logger.debug(f"Backward pass over {n_records} recorded ops.")

    def release(self) -> None:
        """Drops the recorded operations and their saved arrays.

        Recorded outputs refer back to the tape; clearing the records breaks
        that cycle.
        """
        for function in self.records:
            function.output._tape = None
        self.records = []


def backward(loss: Tensor) -> None:
    """Runs the backward pass on the tape that recorded loss."""
    if loss._tape is None:
        raise ContractError("loss was not produced under an active tape")
    loss._tape.backward(loss)


class Function:
    """Base class of differentiable operations.

    Subclasses implement ``forward`` on numpy arrays and ``backward``, which
    maps the gradient of the output to a tuple of gradients, one per input
    (None for inputs that do not receive a gradient).
    """

    name = "function"

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs
        self.output = None

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError("Backward pass not implemented for this function")

    def kink_distance(self) -> float:
        return np.inf

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        func = cls(*inputs)
        out_data = func.forward(*(t.data for t in inputs), **kwargs)
        if not np.all(np.isfinite(out_data)):
            raise NumericError("non-finite output", op=cls.name)

        tape = Tape.current()
        requires_grad = tape is not None and any(t.requires_grad for t in inputs)
        out = Tensor._wrap(out_data, requires_grad=requires_grad)
        func.output = out
        if requires_grad:
            tape.record(func)
        return out
