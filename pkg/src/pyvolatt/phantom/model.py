"""Toy 2.5D segmentation model with optional volumetric attention."""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from pyvolatt.attention import MODES, VAParams, bag_features, va_forward
from pyvolatt.attention.bag import TargetFeature
from pyvolatt.attention.params import xavier_uniform
from pyvolatt.errors import ConfigurationError, ContractError, DimensionError
from pyvolatt.metrics.detection import mask_to_boxes
from pyvolatt.tensor import Tensor, ops
from pyvolatt.utilities import ordered_map
from pyvolatt.volume.preprocess import BagSpec, make_bag_indices, stack_25d, stack_slice_masks
from pyvolatt.volume.volume import Volume

logger = logging.getLogger(__name__)


@dataclass
class ToyModelConfig:
    """Toy model settings.

    Attributes
    ----------
    channels : int
        Backbone width C. The default is 16.

    depth : int
        Number of backbone conv layers. The default is 3.

    kernel_size : int
        Backbone kernel size. The default is 3.

    mode : str
        Attention mode: 'none', 'channel', 'spatial' or 'both'. The default
        is 'both'.

    bag_size : int
        Number of 2.5D images in the feature bag. The default is 9.

    reduction : int
        Channel attention reduction ratio. The default is 4.

    embed_channels : int
        Spatial embedding channels C_s. The default is 4.

    spatial_kernel : int
        Spatial embedding kernel size. The default is 7.

    scale_scores : bool
        Scale attention scores by 1/sqrt(d). The default is True.

    prior : float
        Initial lesion probability of the head; its bias starts at
        log(prior / (1 - prior)). The default is 0.05.

    gate_bias : float
        Initial bias of both attention gates. The default of 2.0 starts
        the gates near 0.88.

    seed : int
        Initialisation seed.
    """

    channels: int = 16
    depth: int = 3
    kernel_size: int = 3
    mode: str = "both"
    bag_size: int = 9
    reduction: int = 4
    embed_channels: int = 4
    spatial_kernel: int = 7
    scale_scores: bool = True
    prior: float = 0.05
    gate_bias: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown attention mode {self.mode!r}; expected one of {MODES}")
        if self.depth < 1 or self.channels < 1:
            raise ConfigurationError("the backbone needs at least one layer and one channel")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError(f"unsupported kernel: even kernel size {self.kernel_size}")
        if not 0.0 < self.prior < 1.0:
            raise ConfigurationError(f"head prior must lie in (0, 1), got {self.prior}")
        BagSpec.from_size(self.bag_size)

    @property
    def uses_attention(self) -> bool:
        return self.mode != "none"


class ToyModel:
    """A small convolutional backbone, an optional volumetric attention
    module and a 1×1 segmentation head.

    Without attention the model maps each 2.5D slab to the logits of its
    centre slice independently. With attention, the backbone features of
    the bag of slabs around the target are used to gate the target
    features before the head.

    Parameters
    ----------
    cfg : ToyModelConfig
        The model settings.
    """

    def __init__(self, cfg: ToyModelConfig = None) -> None:
        self.cfg = cfg if cfg is not None else ToyModelConfig()
        self.bag = BagSpec.from_size(self.cfg.bag_size)
        rng = np.random.default_rng(self.cfg.seed)

        c, k = self.cfg.channels, self.cfg.kernel_size
        self.backbone = []
        c_in = 3
        for i in range(self.cfg.depth):
            fan_in, fan_out = c_in * k * k, c * k * k
            w = Tensor(
                xavier_uniform(rng, (c, c_in, k, k), fan_in, fan_out),
                requires_grad=True,
                name=f"backbone{i}.weight",
            )
            b = Tensor(np.zeros(c), requires_grad=True, name=f"backbone{i}.bias")
            self.backbone.append((w, b))
            c_in = c
        self.head_weight = Tensor(
            xavier_uniform(rng, (1, c, 1, 1), c, 1), requires_grad=True, name="head.weight"
        )
        self.head_bias = Tensor(
            [np.log(self.cfg.prior / (1.0 - self.cfg.prior))], requires_grad=True, name="head.bias"
        )

        self.va = None
        if self.cfg.uses_attention:
            self.va = VAParams.init(
                c,
                reduction=self.cfg.reduction,
                embed_channels=self.cfg.embed_channels,
                kernel_size=self.cfg.spatial_kernel,
                rng=rng,
            )
            self.va.channel.gate_bias.data[:] = self.cfg.gate_bias
            self.va.spatial.gate_bias.data[:] = self.cfg.gate_bias

    def __repr__(self) -> str:
        return f"ToyModel(C={self.cfg.channels}, mode={self.cfg.mode}, N={self.cfg.bag_size})"

    def parameters(self) -> List[Tensor]:
        params = [t for layer in self.backbone for t in layer]
        params += [self.head_weight, self.head_bias]
        if self.va is not None:
            params += self.va.parameters()
        return params

    def va_parameters(self) -> List[Tensor]:
        return [] if self.va is None else self.va.parameters()

    def state(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter, keyed by name."""
        named = {}
        for p in self.parameters():
            named[p.name] = p.data.copy()
        return named

    def features(self, slab: Tensor) -> Tensor:
        """Backbone features C×H×W of one 3×H×W slab."""
        x = slab
        for w, b in self.backbone:
            x = ops.relu(ops.conv2d(x, w, bias=b))
        return x

    def head(self, feature: Tensor) -> Tensor:
        """Segmentation logits 1×H×W."""
        return ops.conv2d(feature, self.head_weight, pad=0, bias=self.head_bias)

    def attend(self, z: int, feature_of, n_slices: int, target: Tensor = None) -> Tensor:
        """Gated target features of slice z.

        Parameters
        ----------
        z : int
            The target slice.

        feature_of : callable
            Maps a slice index to its backbone feature map.

        n_slices : int
            Number of slices in the volume.

        target : Tensor, optional
            The target feature map X_tgt. The default is feature_of(z).
        """
        target = feature_of(z) if target is None else target
        if self.va is None:
            return target
        indices = make_bag_indices(z, self.bag, n_slices)
        bag = bag_features([feature_of(i) for i in indices], self.bag.offsets)
        out, _ = va_forward(
            TargetFeature(target),
            bag,
            self.va.channel,
            self.va.spatial,
            mode=self.cfg.mode,
            scale_scores=self.cfg.scale_scores,
        )
        return out

    def slab_features(self, volume: Volume) -> List[Tensor]:
        """Backbone features of every slab of a volume, one per slice.

        Outside a tape the maps are plain constants.
        """
        return ordered_map(lambda i: self.features(stack_25d(volume, i).channels), range(volume.Z))

    def forward(self, volume: Volume, z: int, context: Sequence[Tensor] = None) -> Tensor:
        """Logits 1×H×W of slice z.

        Without context, backbone features are computed once per distinct
        slab so every op can be recorded on an active tape. With context
        (the output of :meth:`slab_features`), the bag is read from it as
        constants and only the target slab runs through the backbone.
        """
        if context is not None:
            if len(context) != volume.Z:
                raise ContractError(
                    f"context holds {len(context)} feature maps for {volume.Z} slices"
                )
            target = self.features(stack_25d(volume, z).channels)
            return self.head(self.attend(z, context.__getitem__, volume.Z, target=target))

        cache = {}

        def feature_of(i):
            if i not in cache:
                cache[i] = self.features(stack_25d(volume, i).channels)
            return cache[i]

        return self.head(self.attend(z, feature_of, volume.Z))

    def predict_volume(self, volume: Volume) -> np.ndarray:
        """Lesion probability volume Z×H×W.

        Runs without a tape; backbone features of each slab are computed
        once and shared by every bag they belong to.
        """
        if volume.intensity_space != "unit":
            raise ConfigurationError("the toy model expects a unit-space volume")
        feats = self.slab_features(volume)
        logits = [self.head(self.attend(z, feats.__getitem__, volume.Z)) for z in range(volume.Z)]
        return stack_slice_masks([ops.sigmoid(lg).data[0] for lg in logits])

    @staticmethod
    def score_components(prob: np.ndarray, threshold: float = 0.5) -> tuple:
        """Scoring head: boxes of the thresholded probability map of one
        slice, each scored by the maximum probability inside it."""
        prob = np.asarray(prob)
        if prob.ndim != 2:
            raise DimensionError("score_components needs an H×W probability map", prob.shape)
        return mask_to_boxes(prob > threshold, prob)
