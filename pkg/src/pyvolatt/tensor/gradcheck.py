import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from pyvolatt.errors import ContractError
from pyvolatt.tensor import ops
from pyvolatt.tensor.core import Tape, Tensor, zero_grad

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-4
DEFAULT_TOL = 1e-4


@dataclass
class GradcheckReport:
    """The outcome of comparing analytic and finite difference gradients.

    Attributes
    ----------
    name : str
        The label of the checked function.

    max_rel_error : float
        The largest relative error over every checked element, where the
        relative error is |analytic - numeric| / max(1, |analytic|, |numeric|).

    tol : float
        The tolerance the error was compared against.

    passed : bool
        True iff max_rel_error <= tol.

    worst : str
        The input and element index at which the largest error occurred.

    kink_distance : float
        The smallest distance of any recorded op input to a point where the
        op is not differentiable. Finite differences are unreliable when this
        is comparable to eps.
    """

    name: str
    max_rel_error: float
    tol: float
    passed: bool
    worst: str = ""
    kink_distance: float = np.inf

    def near_kink(self, margin: float) -> bool:
        return self.kink_distance < margin

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.0e})"


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    name: str = None,
) -> GradcheckReport:
    """Compares the tape gradient of a scalar function with central
    differences.

    Parameters
    ----------
    f : callable
        A function of the input tensors (passed positionally) returning a
        scalar tensor.

    inputs : Tensor or list of Tensor
        The double precision tensors to differentiate with respect to. They
        must have requires_grad set.

    eps : float, optional
        The central difference step. The default is 1e-4.

    tol : float, optional
        The pass tolerance on the maximum relative error. The default is 1e-4.

    name : str, optional
        A label for the report.

    Returns
    -------
    GradcheckReport
        The comparison report.

    Raises
    ------
    NumericError
        If any intermediate value is non-finite; the error names the op.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ContractError("gradcheck requires double precision inputs")
        if not t.requires_grad:
            raise ContractError(f"gradcheck input {t!r} does not require grad")
    name = name or getattr(f, "__name__", "function")

    zero_grad(inputs)
    with Tape() as tape:
        out = f(*inputs)
    if out.data.size != 1:
        raise ContractError(f"gradcheck needs a scalar function, got shape {out.shape}")
    kink = tape.min_kink_distance()
    tape.backward(out)
    analytic = [t.grad.copy() for t in inputs]

    max_err = 0.0
    worst = ""
    for i, t in enumerate(inputs):
        # perturbations are written through a flat view
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        grad = analytic[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = f(*inputs).item()
            flat[j] = orig - eps
            f_minus = f(*inputs).item()
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(grad[j] - numeric) / max(1.0, abs(grad[j]), abs(numeric))
            if err > max_err:
                max_err = err
                label = t.name or f"input {i}"
                worst = f"{label}[{np.unravel_index(j, t.shape)}]"

    zero_grad(inputs)
    report = GradcheckReport(
        name=name,
        max_rel_error=max_err,
        tol=tol,
        passed=bool(max_err <= tol),
        worst=worst,
        kink_distance=kink,
    )
    logger.debug(str(report))
    return report


def _leaf(rng, shape, name, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, name=name)


def _away_from_zero(rng, shape, name, margin=0.05):
    values = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(values, requires_grad=True, name=name)


def op_cases() -> dict:
    """Returns the gradcheck case builders for every tensor op.

    Each builder maps a numpy Generator to ``(f, inputs)`` where f reduces the
    op output to a scalar through a fixed random projection, so that every
    output element contributes to the checked gradient.
    """

    def project(rng, shape):
        weights = Tensor(rng.uniform(-1.0, 1.0, size=shape))
        return lambda y: ops.sum(ops.mul(y, weights))

    def matmul_case(rng):
        a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4, 2), "b")
        proj = project(rng, (3, 2))
        return lambda a, b: proj(ops.matmul(a, b)), [a, b]

    def conv_case(rng, k):
        x, w = _leaf(rng, (2, 5, 5), "x"), _leaf(rng, (3, 2, k, k), "w")
        bias = _leaf(rng, (3,), "bias")
        proj = project(rng, (3, 5, 5))
        return lambda x, w, b: proj(ops.conv2d(x, w, bias=b)), [x, w, bias]

    def gap_case(rng):
        x = _leaf(rng, (3, 4, 5), "x")
        proj = project(rng, (3,))
        return lambda x: proj(ops.global_avg_pool(x)), [x]

    def channel_pool_case(rng):
        x = _leaf(rng, (4, 3, 3), "x")
        proj = project(rng, (2, 3, 3))
        return lambda x: proj(ops.channel_pool(x)), [x]

    def softmax_case(rng):
        x = _leaf(rng, (6,), "x", -2.0, 2.0)
        proj = project(rng, (6,))
        return lambda x: proj(ops.softmax(x)), [x]

    def relu_case(rng):
        x = _away_from_zero(rng, (10,), "x")
        proj = project(rng, (10,))
        return lambda x: proj(ops.relu(x)), [x]

    def sigmoid_case(rng):
        x = _leaf(rng, (10,), "x", -4.0, 4.0)
        proj = project(rng, (10,))
        return lambda x: proj(ops.sigmoid(x)), [x]

    def mul_broadcast_case(rng, gate_shape):
        x, g = _leaf(rng, (3, 4, 4), "x"), _leaf(rng, gate_shape, "gate")
        proj = project(rng, (3, 4, 4))
        return lambda x, g: proj(ops.mul_broadcast(x, g)), [x, g]

    def add_bias_case(rng):
        x, b = _leaf(rng, (3, 2, 2), "x"), _leaf(rng, (3,), "b")
        proj = project(rng, (3, 2, 2))
        return lambda x, b: proj(ops.add_bias(x, b)), [x, b]

    def reshape_transpose_case(rng):
        x = _leaf(rng, (2, 6), "x")
        proj = project(rng, (4, 3))
        return lambda x: proj(ops.transpose(ops.reshape(x, (3, 4)))), [x]

    def stack_select_case(rng):
        a, b = _leaf(rng, (2, 3), "a"), _leaf(rng, (2, 3), "b")
        proj = project(rng, (2, 3))
        return lambda a, b: proj(ops.select(ops.stack([a, b, a]), 2)), [a, b]

    def bce_case(rng):
        z = _leaf(rng, (4, 4), "logits", -3.0, 3.0)
        target = (rng.uniform(size=(4, 4)) > 0.5).astype(float)
        return lambda z: ops.bce_with_logits(z, target, pos_weight=2.0), [z]

    return {
        "matmul": matmul_case,
        "conv2d_k1": lambda rng: conv_case(rng, 1),
        "conv2d_k3": lambda rng: conv_case(rng, 3),
        "global_avg_pool": gap_case,
        "channel_pool": channel_pool_case,
        "softmax": softmax_case,
        "relu": relu_case,
        "sigmoid": sigmoid_case,
        "mul_broadcast_channel": lambda rng: mul_broadcast_case(rng, (3, 1, 1)),
        "mul_broadcast_spatial": lambda rng: mul_broadcast_case(rng, (1, 4, 4)),
        "add_bias": add_bias_case,
        "reshape_transpose": reshape_transpose_case,
        "stack_select": stack_select_case,
        "bce_with_logits": bce_case,
    }


def run_cases(
    cases: dict,
    seed: int = 12,
    points: int = 25,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    kink_margin: float = 1e-3,
    max_attempts: int = 200,
) -> list:
    """Runs every case at ``points`` random points and reports the worst one.

    Points whose recorded ops sit within kink_margin of a non-differentiable
    point are redrawn, since central differences straddling a kink measure
    the kink rather than the gradient.

    Returns
    -------
    list of GradcheckReport
        One report per case, carrying the maximum error over its points.
    """
    reports = []
    for name, builder in cases.items():
        rng = np.random.default_rng(seed)
        worst = None
        accepted, attempts = 0, 0
        while accepted < points:
            attempts += 1
            if attempts > max_attempts:
                raise ContractError(
                    f"gradcheck case '{name}' kept sampling points near a kink"
                )
            f, inputs = builder(rng)
            report = gradcheck(f, inputs, eps=eps, tol=tol, name=name)
            if report.near_kink(kink_margin):
                continue
            accepted += 1
            if worst is None or report.max_rel_error > worst.max_rel_error:
                worst = report
        reports.append(worst)
    return reports
