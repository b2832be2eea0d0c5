"""Minimal dense tensor engine with reverse-mode differentiation."""

from .core import (
    Function,
    Tape,
    Tensor,
    as_tensor,
    backward,
    get_default_dtype,
    set_default_dtype,
    zero_grad,
)
from .ops import (
    add,
    add_bias,
    bce_with_logits,
    channel_pool,
    conv2d,
    global_avg_pool,
    matmul,
    mean,
    mul,
    mul_broadcast,
    relu,
    reshape,
    scale,
    select,
    sigmoid,
    softmax,
    stack,
    transpose,
)
from .gradcheck import GradcheckReport, gradcheck
from .io import load_tensor, save_tensor
