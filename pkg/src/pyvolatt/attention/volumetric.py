"""Volumetric channel and spatial attention.

Both branches follow the same pattern:

1. embed the target map and every bag member with shared weights,
2. score each bag member by its inner product with the target embedding,
3. softmax the scores over the bag (the slice attention signal),
4. take the attention-weighted sum of member embeddings,
5. relu, 1×1 conv and sigmoid it into a gate,

and the gates multiply the target feature map, channel gate first.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from pyvolatt.attention.bag import FeatureBag, TargetFeature
from pyvolatt.attention.params import ChannelAttnParams, SpatialAttnParams, VAParams
from pyvolatt.errors import ConfigurationError, ContractError, DimensionError
from pyvolatt.tensor import Tensor, ops

logger = logging.getLogger(__name__)

MODES = ("none", "channel", "spatial", "both")


@dataclass
class AttnWeights:
    """Attention signals produced by one forward pass.

    Attributes
    ----------
    channel_slices : Tensor
        1×N softmax weights of the channel branch.

    spatial_slices : Tensor
        1×N softmax weights of the spatial branch.

    channel_gate : Tensor
        C×1×1 channel gate S_c.

    spatial_gate : Tensor
        1×H×W spatial gate S_s.
    """

    channel_slices: Optional[Tensor] = None
    spatial_slices: Optional[Tensor] = None
    channel_gate: Optional[Tensor] = None
    spatial_gate: Optional[Tensor] = None


def _check_compatible(tgt: TargetFeature, bag: FeatureBag) -> None:
    if bag.n < 1:
        raise ContractError("the feature bag is empty")
    if tuple(bag.member_shape) != tuple(tgt.shape):
        raise DimensionError("target and bag members differ in shape", tgt.shape, bag.member_shape)


def _scores(e_tgt: Tensor, members: Tensor, scale_scores: bool) -> Tensor:
    """1×D target embedding against N×D member embeddings -> 1×N scores."""
    scores = ops.matmul(e_tgt, ops.transpose(members))
    if scale_scores:
        scores = ops.scale(scores, 1.0 / np.sqrt(members.shape[1]))
    return scores


def channel_embed(x: Tensor, p: ChannelAttnParams) -> Tensor:
    """Channel embedding w2 · relu(w1 · global_avg_pool(x)).

    Returns a length C tensor.
    """
    c = x.shape[0]
    if c % p.reduction != 0:
        raise ConfigurationError(f"reduction ratio {p.reduction} does not divide {c} channels")
    if c != p.channels:
        raise DimensionError("feature map channels do not match the embedding", x.shape, p.w1.shape)
    pooled = ops.reshape(ops.global_avg_pool(x), (c, 1))
    hidden = ops.relu(ops.matmul(p.w1, pooled))
    return ops.reshape(ops.matmul(p.w2, hidden), (c,))


def channel_attention(
    tgt: TargetFeature,
    bag: FeatureBag,
    p: ChannelAttnParams,
    scale_scores: bool = False,
) -> tuple:
    """Volumetric channel attention.

    Parameters
    ----------
    tgt : TargetFeature
        The target map X_tgt.

    bag : FeatureBag
        The bag of long-range features X_long.

    p : ChannelAttnParams
        The branch weights, shared by the target and every bag member.

    scale_scores : bool, optional
        Divide the dot-product scores by sqrt(C). The default is False.

    Returns
    -------
    gate : Tensor
        The C×1×1 channel gate.

    slices : Tensor
        The 1×N slice attention signal.
    """
    _check_compatible(tgt, bag)
    c = tgt.shape[0]
    e_tgt = ops.reshape(channel_embed(tgt.map, p), (1, c))
    members = ops.stack([channel_embed(bag.member(k), p) for k in range(bag.n)])

    slices = ops.softmax(_scores(e_tgt, members, scale_scores), axis=-1)
    attended = ops.reshape(ops.relu(ops.matmul(slices, members)), (c, 1, 1))
    gate = ops.sigmoid(ops.conv2d(attended, p.gate_conv, pad=0, bias=p.gate_bias))
    return gate, slices


def spatial_embed(x: Tensor, p: SpatialAttnParams) -> Tensor:
    """Spatial embedding: the embed conv applied to the channel max and mean
    planes. Returns a C_s×H×W tensor."""
    return ops.conv2d(ops.channel_pool(x), p.embed_conv, pad=(p.kernel_size - 1) // 2)


def spatial_attention(
    tgt: TargetFeature,
    bag: FeatureBag,
    p: SpatialAttnParams,
    scale_scores: bool = False,
) -> tuple:
    """Volumetric spatial attention.

    Embeddings are flattened to C_s·H·W vectors and scored by their full
    inner product.

    Returns
    -------
    gate : Tensor
        The 1×H×W spatial gate.

    slices : Tensor
        The 1×N slice attention signal.
    """
    _check_compatible(tgt, bag)
    _, h, w = tgt.shape
    d = p.embed_channels * h * w
    e_tgt = ops.reshape(spatial_embed(tgt.map, p), (1, d))
    members = ops.stack(
        [ops.reshape(spatial_embed(bag.member(k), p), (d,)) for k in range(bag.n)]
    )

    slices = ops.softmax(_scores(e_tgt, members, scale_scores), axis=-1)
    attended = ops.reshape(ops.matmul(slices, members), (p.embed_channels, h, w))
    gate = ops.sigmoid(ops.conv2d(ops.relu(attended), p.gate_conv, pad=0, bias=p.gate_bias))
    return gate, slices


def va_forward(
    tgt: TargetFeature,
    bag: FeatureBag,
    cp: Optional[ChannelAttnParams],
    sp: Optional[SpatialAttnParams],
    mode: str = "both",
    scale_scores: bool = False,
) -> tuple:
    """Applies volumetric attention to the target feature map.

    Both gates are computed from the original (un-gated) features and then
    applied in sequence: Y = X_tgt ⊙ S_c, Z = Y ⊙ S_s.

    Parameters
    ----------
    tgt : TargetFeature
        The target map.

    bag : FeatureBag
        The bag of long-range features.

    cp : ChannelAttnParams
        Channel branch weights. Unused (may be None) when mode is 'spatial'
        or 'none'.

    sp : SpatialAttnParams
        Spatial branch weights. Unused (may be None) when mode is 'channel'
        or 'none'.

    mode : str, optional
        One of 'none', 'channel', 'spatial' or 'both'. The default is 'both'.

    scale_scores : bool, optional
        Scale dot-product scores by 1/sqrt(d). The default is False.

    Returns
    -------
    out : Tensor
        The C×H×W attended map.

    weights : AttnWeights
        The slice signals and gates that were computed.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown attention mode {mode!r}; expected one of {MODES}")
    weights = AttnWeights()
    out = tgt.map
    if mode == "none":
        return out, weights

    use_channel = mode in ("channel", "both")
    use_spatial = mode in ("spatial", "both")
    if use_channel and cp is None or use_spatial and sp is None:
        raise ContractError(f"mode {mode!r} needs the parameters of its branches")

    if use_channel:
        weights.channel_gate, weights.channel_slices = channel_attention(
            tgt, bag, cp, scale_scores
        )
    if use_spatial:
        weights.spatial_gate, weights.spatial_slices = spatial_attention(
            tgt, bag, sp, scale_scores
        )
    if use_channel:
        out = ops.mul_broadcast(out, weights.channel_gate)
    if use_spatial:
        out = ops.mul_broadcast(out, weights.spatial_gate)
    return out, weights


class VAStack:
    """Independent volumetric attention modules, one per pyramid level.

    Parameters
    ----------
    levels : list of VAParams
        The parameters of each level, indexed by pyramid level.

    mode : str, optional
        The attention mode applied at every level. The default is 'both'.

    scale_scores : bool, optional
        Scale dot-product scores. The default is False.
    """

    def __init__(self, levels: Sequence[VAParams], mode: str = "both", scale_scores: bool = False):
        if mode not in MODES:
            raise ConfigurationError(f"unknown attention mode {mode!r}")
        self.levels = list(levels)
        self.mode = mode
        self.scale_scores = scale_scores

    def __len__(self) -> int:
        return len(self.levels)

    def parameters(self) -> List[Tensor]:
        return [t for level in self.levels for t in level.parameters()]

    def forward(self, targets: Sequence[TargetFeature], bags: Sequence[FeatureBag]) -> tuple:
        """Runs va_forward at every level with that level's parameters.

        Returns
        -------
        outs : list of Tensor
            The attended map of each level.

        weights : list of AttnWeights
            The attention signals of each level.
        """
        if len(targets) != len(self.levels) or len(bags) != len(self.levels):
            raise ContractError(
                f"{len(self.levels)} levels but {len(targets)} targets and {len(bags)} bags"
            )
        outs, weights = [], []
        for tgt, bag in zip(targets, bags):
            if not 0 <= tgt.pyramid_level < len(self.levels):
                raise ContractError(
                    f"pyramid level {tgt.pyramid_level} outside [0, {len(self.levels) - 1}]"
                )
            level = self.levels[tgt.pyramid_level]
            out, w = va_forward(
                tgt, bag, level.channel, level.spatial, self.mode, self.scale_scores
            )
            outs.append(out)
            weights.append(w)
        return outs, weights
