"""Differentiable operators.

Each operator is a :class:`~pyvolatt.tensor.core.Function` subclass with a
functional wrapper of the same (lower case) name. Shapes follow the
channel-first convention C×H×W for single feature maps.
"""

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from pyvolatt.errors import ConfigurationError, DimensionError, NumericError
from pyvolatt.tensor.core import Function, Tensor, as_tensor


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an M×K and a K×P tensor."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner extents do not match", a.shape, b.shape)
    return MatMul.apply(a, b)


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x, w, *bias, pad):
        c_out, c_in, k, _ = w.shape
        self.x_shape = x.shape
        self.w_shape = w.shape
        self.pad = pad
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))
        h_out, w_out = windows.shape[1], windows.shape[2]
        # (C_in, k, k, H', W') -> (C_in·k·k, H'·W')
        self.cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, -1)
        self.w_mat = w.reshape(c_out, -1)
        out = self.w_mat @ self.cols
        if bias:
            out = out + bias[0][:, None]
        self.out_hw = (h_out, w_out)
        return out.reshape(c_out, h_out, w_out)

    def backward(self, grad):
        c_out, c_in, k, _ = self.w_shape
        h_out, w_out = self.out_hw
        g = grad.reshape(c_out, -1)
        dw = (g @ self.cols.T).reshape(self.w_shape)
        dcols = (self.w_mat.T @ g).reshape(c_in, k, k, h_out, w_out)
        _, h, w = self.x_shape
        p = self.pad
        dxp = np.zeros((c_in, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + h_out, j : j + w_out] += dcols[:, i, j]
        dx = dxp[:, p : p + h, p : p + w]
        if len(self.inputs) == 3:
            return dx, dw, g.sum(axis=1)
        return dx, dw


def conv2d(x: Tensor, w: Tensor, pad: int = None, bias: Tensor = None) -> Tensor:
    """2-D cross-correlation of a C_in×H×W map with a C_out×C_in×k×k kernel.

    Parameters
    ----------
    x : Tensor
        The input map, C_in×H×W.

    w : Tensor
        The kernel, C_out×C_in×k×k, with k odd.

    pad : int, optional
        Zero padding on each spatial side. The default is (k-1)/2, which
        preserves the spatial shape.

    bias : Tensor, optional
        A length C_out bias added to every output pixel.

    Returns
    -------
    Tensor
        The C_out×H'×W' output. No kernel flip is applied.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError("conv2d kernel must be C_out×C_in×k×k", w.shape)
    k = w.shape[2]
    if k % 2 == 0:
        raise ConfigurationError(f"unsupported kernel: even kernel size {k}")
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise DimensionError("conv2d input channels do not match kernel", x.shape, w.shape)
    if pad is None:
        pad = (k - 1) // 2
    if x.shape[1] + 2 * pad < k or x.shape[2] + 2 * pad < k:
        raise DimensionError("conv2d input smaller than kernel", x.shape, w.shape)
    inputs = (x, w)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise DimensionError("conv2d bias must have C_out entries", bias.shape, w.shape)
        inputs = (x, w, bias)
    return Conv2d.apply(*inputs, pad=pad)


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    def forward(self, x):
        self.x_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        _, h, w = self.x_shape
        return (np.broadcast_to(grad[:, None, None] / (h * w), self.x_shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    """Averages a C×H×W map over its spatial extent, returning C values."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise DimensionError("global_avg_pool needs a non-empty C×H×W map", x.shape)
    return GlobalAvgPool.apply(x)


class ChannelPool(Function):
    name = "channel_pool"

    def forward(self, x):
        self.x_shape = x.shape
        # argmax returns the first maximum, so ties go to the lowest channel
        self.argmax = np.argmax(x, axis=0)
        if x.shape[0] > 1:
            top2 = np.sort(x, axis=0)[-2:]
            self.gap = float(np.min(top2[1] - top2[0]))
        else:
            self.gap = np.inf
        return np.stack([x.max(axis=0), x.mean(axis=0)])

    def backward(self, grad):
        c, h, w = self.x_shape
        dx = np.broadcast_to(grad[1] / c, self.x_shape).copy()
        rows, cols = np.indices((h, w))
        dx[self.argmax, rows, cols] += grad[0]
        return (dx,)

    def kink_distance(self):
        return self.gap


def channel_pool(x: Tensor) -> Tensor:
    """Max and average pooling along the channel axis.

    Returns a 2×H×W tensor: plane 0 is the per-pixel maximum over channels,
    plane 1 the per-pixel mean.
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] < 1:
        raise DimensionError("channel_pool needs a C×H×W map with C >= 1", x.shape)
    return ChannelPool.apply(x)


class Softmax(Function):
    name = "softmax"

    def forward(self, x, axis):
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.y = e / np.sum(e, axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along axis."""
    x = as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite softmax input", op="softmax")
    return Softmax.apply(x, axis=axis)


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.x = x
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return (grad * (self.x > 0),)

    def kink_distance(self):
        return float(np.min(np.abs(self.x))) if self.x.size else np.inf


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(as_tensor(x))


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        self.y = expit(x)
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(as_tensor(x))


class MulBroadcast(Function):
    name = "mul_broadcast"

    def forward(self, x, gate):
        self.x, self.gate = x, gate
        return x * gate

    def backward(self, grad):
        axes = tuple(i for i, n in enumerate(self.gate.shape) if n == 1)
        dgate = np.sum(grad * self.x, axis=axes, keepdims=True)
        return grad * self.gate, dgate


def mul_broadcast(x: Tensor, gate: Tensor) -> Tensor:
    """Multiplies a C×H×W map by a C×1×1 (channel) or 1×H×W (spatial) gate."""
    x, gate = as_tensor(x), as_tensor(gate)
    if x.ndim != 3 or gate.ndim != 3:
        raise DimensionError("mul_broadcast needs 3-axis operands", x.shape, gate.shape)
    c, h, w = x.shape
    if gate.shape not in ((c, 1, 1), (1, h, w)):
        raise DimensionError("gate shape is not broadcastable", x.shape, gate.shape)
    return MulBroadcast.apply(x, gate)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two tensors of identical shape."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("mul operands differ in shape", a.shape, b.shape)
    return Mul.apply(a, b)


class Add(Function):
    name = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("add operands differ in shape", a.shape, b.shape)
    return Add.apply(a, b)


class AddBias(Function):
    name = "add_bias"

    def forward(self, x, b):
        return x + b[:, None, None]

    def backward(self, grad):
        return grad, grad.sum(axis=(1, 2))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Adds a length C vector to every pixel of a C×H×W map."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 3 or b.shape != (x.shape[0],):
        raise DimensionError("add_bias needs a C×H×W map and C biases", x.shape, b.shape)
    return AddBias.apply(x, b)


class Scale(Function):
    name = "scale"

    def forward(self, x, factor):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiplies a tensor by a constant."""
    return Scale.apply(as_tensor(x), factor=float(factor))


class Sum(Function):
    name = "sum"

    def forward(self, x):
        self.x_shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.x_shape, grad.reshape(-1)[0], dtype=grad.dtype),)


def sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    return Sum.apply(as_tensor(x))


def mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    x = as_tensor(x)
    return scale(sum(x), 1.0 / x.size)


class Reshape(Function):
    name = "reshape"

    def forward(self, x, shape):
        self.x_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.x_shape),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        np.empty(x.shape).reshape(shape)
    except ValueError:
        raise DimensionError("cannot reshape", x.shape, shape) from None
    return Reshape.apply(x, shape=shape)


class Transpose(Function):
    name = "transpose"

    def forward(self, x):
        return x.T.copy()

    def backward(self, grad):
        return (grad.T,)


def transpose(x: Tensor) -> Tensor:
    """Transpose of a 2-D tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("transpose needs a 2-D tensor", x.shape)
    return Transpose.apply(x)


class Stack(Function):
    name = "stack"

    def forward(self, *arrays):
        return np.stack(arrays)

    def backward(self, grad):
        return tuple(grad[i] for i in range(grad.shape[0]))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenates same-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError("stack operands differ in shape", shape, t.shape)
    return Stack.apply(*tensors)


class Select(Function):
    name = "select"

    def forward(self, x, index):
        self.x_shape = x.shape
        self.index = index
        return x[index].copy()

    def backward(self, grad):
        dx = np.zeros(self.x_shape, dtype=grad.dtype)
        dx[self.index] = grad
        return (dx,)


def select(x: Tensor, index: int) -> Tensor:
    """Selects entry ``index`` along the leading axis."""
    x = as_tensor(x)
    if not -x.shape[0] <= index < x.shape[0]:
        raise DimensionError(f"select index {index} out of range", x.shape)
    return Select.apply(x, index=index)


class BCEWithLogits(Function):
    name = "bce_with_logits"

    def forward(self, z, target, pos_weight):
        self.z, self.target, self.pos_weight = z, target, pos_weight
        loss = pos_weight * target * np.logaddexp(0.0, -z) + (1.0 - target) * np.logaddexp(
            0.0, z
        )
        return np.asarray(loss.mean())

    def backward(self, grad):
        s = expit(self.z)
        t = self.target
        dz = (self.pos_weight * t * (s - 1.0) + (1.0 - t) * s) / self.z.size
        return (grad.reshape(-1)[0] * dz,)


def bce_with_logits(logits: Tensor, target, pos_weight: float = 1.0) -> Tensor:
    """Mean per-element binary cross entropy of logits against a {0, 1}
    target array. Positive elements are weighted by pos_weight."""
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=logits.data.dtype)
    if target.shape != logits.shape:
        raise DimensionError("bce target does not match logits", logits.shape, target.shape)
    return BCEWithLogits.apply(logits, target=target, pos_weight=float(pos_weight))
