"""Gradient check cases for the attention mechanism."""

import numpy as np

from pyvolatt.attention.bag import TargetFeature, bag_features
from pyvolatt.attention.params import ChannelAttnParams, SpatialAttnParams
from pyvolatt.attention.volumetric import va_forward
from pyvolatt.tensor import Tensor, ops
from pyvolatt.tensor.gradcheck import DEFAULT_EPS, DEFAULT_TOL, op_cases, run_cases

CHANNELS = 4
REDUCTION = 2
BAG_OFFSETS = (-1, 0, 1)
SIZE = 4
KERNEL = 3


def _va_case(mode: str):
    def build(rng: np.random.Generator):
        c, h = CHANNELS, SIZE
        hidden = c // REDUCTION

        def leaf(shape, name, bound=1.0):
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

        x_tgt = leaf((c, h, h), "x_tgt")
        members = [leaf((c, h, h), f"bag[{o}]") for o in BAG_OFFSETS]
        params = [
            leaf((hidden, c), "w1"),
            leaf((c, hidden), "w2"),
            leaf((c, c, 1, 1), "channel_gate_conv"),
            leaf((c,), "channel_gate_bias"),
            leaf((1, 2, KERNEL, KERNEL), "spatial_embed_conv", 0.5),
            leaf((1, 1, 1, 1), "spatial_gate_conv"),
            leaf((1,), "spatial_gate_bias"),
        ]
        projection = Tensor(rng.uniform(-1.0, 1.0, size=(c, h, h)))
        n = len(members)

        def f(x, *rest):
            maps, (w1, w2, gc, gb, ec, sgc, sgb) = rest[:n], rest[n:]
            bag = bag_features(maps, BAG_OFFSETS)
            cp = ChannelAttnParams(w1, w2, gc, gb, reduction=REDUCTION)
            sp = SpatialAttnParams(ec, sgc, sgb)
            out, _ = va_forward(TargetFeature(x), bag, cp, sp, mode=mode)
            return ops.sum(ops.mul(out, projection))

        return f, [x_tgt] + members + params

    return build


def va_cases() -> dict:
    """Returns end-to-end gradcheck builders for va_forward in each mode."""
    return {
        "va_forward_channel": _va_case("channel"),
        "va_forward_spatial": _va_case("spatial"),
        "va_forward_both": _va_case("both"),
    }


def run_gradcheck_suite(
    seed: int = 12, tol: float = DEFAULT_TOL, eps: float = DEFAULT_EPS, points: int = 25
) -> list:
    """Gradient checks every tensor op and the end-to-end mechanism.

    Returns
    -------
    list of GradcheckReport
        One report per op (worst point).
    """
    cases = {**op_cases(), **va_cases()}
    return run_cases(cases, seed=seed, points=points, eps=eps, tol=tol)
