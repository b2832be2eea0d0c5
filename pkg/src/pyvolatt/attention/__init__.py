"""Volumetric attention: feature bags, channel and spatial attention."""

from .bag import FeatureBag, TargetFeature, bag_features
from .params import (
    ChannelAttnParams,
    SpatialAttnParams,
    VAParams,
    load_checkpoint,
    save_checkpoint,
)
from .volumetric import (
    MODES,
    AttnWeights,
    VAStack,
    channel_attention,
    channel_embed,
    spatial_attention,
    spatial_embed,
    va_forward,
)
