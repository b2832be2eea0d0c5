import logging
from typing import List, Sequence, Union

import numpy as np

from pyvolatt.errors import ConfigurationError, DimensionError, ParseError
from pyvolatt.tensor import Tensor
from pyvolatt.tensor.io import tensor_bytes
from pyvolatt.utilities import (
    atomic_write_bytes,
    pack_header_blob,
    raw_array,
    read_blob,
    unpack_header_blob,
)

logger = logging.getLogger(__name__)

DEFAULT_REDUCTION = 16
DEFAULT_KERNEL = 7
DEFAULT_EMBED_CHANNELS = 1


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int):
    """Draws uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _param(values, name: str) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class ChannelAttnParams:
    """Learned weights of the volumetric channel attention branch.

    Parameters
    ----------
    w1 : Tensor
        The (C/r)×C first embedding layer.

    w2 : Tensor
        The C×(C/r) second embedding layer.

    gate_conv : Tensor
        The C×C×1×1 convolution applied to the attended embedding.

    gate_bias : Tensor
        The length C bias of gate_conv.

    reduction : int, optional
        The reduction ratio r. The default is 16.
    """

    def __init__(
        self,
        w1: Tensor,
        w2: Tensor,
        gate_conv: Tensor,
        gate_bias: Tensor,
        reduction: int = DEFAULT_REDUCTION,
    ) -> None:
        c = w1.shape[1]
        if reduction < 1 or c % reduction != 0:
            raise ConfigurationError(
                f"reduction ratio {reduction} does not divide {c} channels"
            )
        hidden = c // reduction
        expected = {
            "w1": (w1, (hidden, c)),
            "w2": (w2, (c, hidden)),
            "gate_conv": (gate_conv, (c, c, 1, 1)),
            "gate_bias": (gate_bias, (c,)),
        }
        for label, (t, shape) in expected.items():
            if t.shape != shape:
                raise DimensionError(f"channel attention {label} has the wrong shape", t.shape, shape)
        self.w1 = w1
        self.w2 = w2
        self.gate_conv = gate_conv
        self.gate_bias = gate_bias
        self.reduction = reduction

    def __repr__(self) -> str:
        return f"ChannelAttnParams(C={self.channels}, r={self.reduction})"

    @classmethod
    def init(
        cls, channels: int, reduction: int = DEFAULT_REDUCTION, rng: np.random.Generator = None
    ) -> "ChannelAttnParams":
        """Fan-based uniform initialisation. The gate bias starts at zero so
        the initial gate is close to sigmoid(0) = 0.5."""
        if reduction < 1 or channels % reduction != 0:
            raise ConfigurationError(
                f"reduction ratio {reduction} does not divide {channels} channels"
            )
        rng = rng if rng is not None else np.random.default_rng()
        hidden = channels // reduction
        return cls(
            w1=_param(xavier_uniform(rng, (hidden, channels), channels, hidden), "w1"),
            w2=_param(xavier_uniform(rng, (channels, hidden), hidden, channels), "w2"),
            gate_conv=_param(
                xavier_uniform(rng, (channels, channels, 1, 1), channels, channels),
                "channel_gate_conv",
            ),
            gate_bias=_param(np.zeros(channels), "channel_gate_bias"),
            reduction=reduction,
        )

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> List[Tensor]:
        return [self.w1, self.w2, self.gate_conv, self.gate_bias]


class SpatialAttnParams:
    """Learned weights of the volumetric spatial attention branch.

    Parameters
    ----------
    embed_conv : Tensor
        The C_s×2×k×k embedding convolution applied to the channel-pooled
        maps.

    gate_conv : Tensor
        The 1×C_s×1×1 convolution producing the spatial gate.

    gate_bias : Tensor
        The length 1 bias of gate_conv.
    """

    def __init__(self, embed_conv: Tensor, gate_conv: Tensor, gate_bias: Tensor) -> None:
        if embed_conv.ndim != 4 or embed_conv.shape[1] != 2:
            raise DimensionError("spatial embed conv must be C_s×2×k×k", embed_conv.shape)
        c_s, _, k, k2 = embed_conv.shape
        if k != k2 or k % 2 == 0:
            raise ConfigurationError(f"spatial embed kernel must be odd and square, got {k}×{k2}")
        if c_s < 1:
            raise ConfigurationError("spatial embedding needs at least one channel")
        if gate_conv.shape != (1, c_s, 1, 1) or gate_bias.shape != (1,):
            raise DimensionError(
                "spatial gate conv must be 1×C_s×1×1 with one bias",
                gate_conv.shape,
                gate_bias.shape,
            )
        self.embed_conv = embed_conv
        self.gate_conv = gate_conv
        self.gate_bias = gate_bias

    def __repr__(self) -> str:
        return f"SpatialAttnParams(C_s={self.embed_channels}, k={self.kernel_size})"

    @classmethod
    def init(
        cls,
        embed_channels: int = DEFAULT_EMBED_CHANNELS,
        kernel_size: int = DEFAULT_KERNEL,
        rng: np.random.Generator = None,
    ) -> "SpatialAttnParams":
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ConfigurationError(f"spatial embed kernel must be odd, got {kernel_size}")
        if embed_channels < 1:
            raise ConfigurationError("spatial embedding needs at least one channel")
        rng = rng if rng is not None else np.random.default_rng()
        k = kernel_size
        return cls(
            embed_conv=_param(
                xavier_uniform(rng, (embed_channels, 2, k, k), 2 * k * k, embed_channels * k * k),
                "spatial_embed_conv",
            ),
            gate_conv=_param(
                xavier_uniform(rng, (1, embed_channels, 1, 1), embed_channels, 1),
                "spatial_gate_conv",
            ),
            gate_bias=_param(np.zeros(1), "spatial_gate_bias"),
        )

    @property
    def kernel_size(self) -> int:
        return self.embed_conv.shape[2]

    @property
    def embed_channels(self) -> int:
        return self.embed_conv.shape[0]

    def parameters(self) -> List[Tensor]:
        return [self.embed_conv, self.gate_conv, self.gate_bias]


class VAParams:
    """All learned weights of one volumetric attention module (one pyramid
    level): the channel and the spatial branch."""

    def __init__(self, channel: ChannelAttnParams, spatial: SpatialAttnParams) -> None:
        self.channel = channel
        self.spatial = spatial

    def __repr__(self) -> str:
        return f"VAParams({self.channel!r}, {self.spatial!r})"

    @classmethod
    def init(
        cls,
        channels: int,
        reduction: int = DEFAULT_REDUCTION,
        embed_channels: int = DEFAULT_EMBED_CHANNELS,
        kernel_size: int = DEFAULT_KERNEL,
        rng: np.random.Generator = None,
    ) -> "VAParams":
        rng = rng if rng is not None else np.random.default_rng()
        return cls(
            ChannelAttnParams.init(channels, reduction, rng),
            SpatialAttnParams.init(embed_channels, kernel_size, rng),
        )

    def parameters(self) -> List[Tensor]:
        return self.channel.parameters() + self.spatial.parameters()


def save_checkpoint(
    path: str,
    levels: Union[VAParams, Sequence[VAParams]],
    n_default: int = 9,
) -> None:
    """Writes VA parameters to a single checkpoint file.

    The file holds a one-line JSON manifest ``{module, C, r, k, C_s,
    N_default, level_count, tensors}`` followed by the raw little-endian f64
    tensors, concatenated in manifest order.
    """
    if isinstance(levels, VAParams):
        levels = [levels]
    levels = list(levels)
    first = levels[0]
    dims = (first.channel.channels, first.channel.reduction, first.spatial.kernel_size,
            first.spatial.embed_channels)
    for level in levels[1:]:
        other = (level.channel.channels, level.channel.reduction, level.spatial.kernel_size,
                 level.spatial.embed_channels)
        if other != dims:
            raise ConfigurationError("all checkpointed levels must share C, r, k and C_s")

    tensors, payload = [], []
    for i, level in enumerate(levels):
        for t in level.parameters():
            tensors.append({"name": f"level{i}.{t.name}", "shape": list(t.shape)})
            payload.append(tensor_bytes(t))
    manifest = {
        "module": "va-attention",
        "C": dims[0],
        "r": dims[1],
        "k": dims[2],
        "C_s": dims[3],
        "N_default": int(n_default),
        "level_count": len(levels),
        "tensors": tensors,
    }
    atomic_write_bytes(path, pack_header_blob(manifest, b"".join(payload)))
    logger.info(f"Saved {len(levels)} VA level(s) to {path}.")


def load_checkpoint(path: str) -> tuple:
    """Reads a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    levels : list of VAParams
        The per-level parameters.

    manifest : dict
        The decoded manifest.
    """
    required = ("module", "C", "r", "k", "C_s", "N_default", "level_count", "tensors")
    blob = read_blob(path)
    manifest, payload = unpack_header_blob(blob, required=required)
    if manifest["module"] != "va-attention":
        raise ParseError(f"not a va-attention checkpoint: {manifest['module']!r}", offset=0)

    header_len = len(blob) - len(payload)
    values, pos = [], 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        chunk = payload[pos : pos + nbytes]
        values.append(raw_array(chunk, "f8", shape, offset=header_len + pos))
        pos += nbytes
    if pos != len(payload):
        raise ParseError("trailing bytes after the last tensor", offset=header_len + pos)

    per_level = len(values) // manifest["level_count"]
    levels = []
    for i in range(manifest["level_count"]):
        w1, w2, gc, gb, ec, sgc, sgb = [
            _param(v.astype(np.float64), e["name"].split(".", 1)[1])
            for v, e in zip(
                values[i * per_level : (i + 1) * per_level],
                manifest["tensors"][i * per_level : (i + 1) * per_level],
            )
        ]
        levels.append(
            VAParams(
                ChannelAttnParams(w1, w2, gc, gb, reduction=manifest["r"]),
                SpatialAttnParams(ec, sgc, sgb),
            )
        )
    return levels, manifest
