from typing import Sequence

from pyvolatt.errors import ContractError, DimensionError
from pyvolatt.tensor import Tensor, ops


class FeatureBag:
    """The bag of long-range features of one pyramid level.

    Holds the N×C×H×W concatenation of the feature maps of N contextual
    2.5D images, sorted by their position along z.

    Parameters
    ----------
    maps : Tensor
        The N×C×H×W stacked feature maps.

    z_index : list of int
        The signed slice offset of each map relative to the target,
        strictly increasing and containing 0 (the target itself).
    """

    def __init__(self, maps: Tensor, z_index: Sequence[int]) -> None:
        z_index = [int(z) for z in z_index]
        if maps.ndim != 4:
            raise DimensionError("feature bag maps must be N×C×H×W", maps.shape)
        if maps.shape[0] < 1 or maps.shape[0] != len(z_index):
            raise ContractError(
                f"feature bag has {maps.shape[0]} maps but {len(z_index)} offsets"
            )
        if any(b <= a for a, b in zip(z_index, z_index[1:])):
            raise ContractError(f"bag offsets must strictly increase, got {z_index}")
        if 0 not in z_index:
            raise ContractError("bag offsets must contain the target offset 0")
        self.maps = maps
        self.z_index = z_index

    def __repr__(self) -> str:
        return f"FeatureBag(N={self.n}, C×H×W={self.member_shape}, z={self.z_index})"

    def __len__(self) -> int:
        return self.n

    @property
    def n(self) -> int:
        return self.maps.shape[0]

    @property
    def member_shape(self) -> tuple:
        return self.maps.shape[1:]

    @property
    def target_position(self) -> int:
        return self.z_index.index(0)

    def member(self, k: int) -> Tensor:
        return ops.select(self.maps, k)


class TargetFeature:
    """The feature map X_tgt of the target 2.5D image at one pyramid level."""

    def __init__(self, map: Tensor, pyramid_level: int = 0) -> None:
        if map.ndim != 3:
            raise DimensionError("target feature must be C×H×W", map.shape)
        self.map = map
        self.pyramid_level = pyramid_level

    def __repr__(self) -> str:
        return f"TargetFeature(level={self.pyramid_level}, shape={self.map.shape})"

    @property
    def shape(self) -> tuple:
        return self.map.shape


def bag_features(per_image_maps: Sequence[Tensor], offsets: Sequence[int]) -> FeatureBag:
    """Builds the bag of long-range features.

    Parameters
    ----------
    per_image_maps : list of Tensor
        One C×H×W feature map per contextual image, in any order.

    offsets : list of int
        The z offset of each map relative to the target. Must be unique and
        contain 0.

    Returns
    -------
    FeatureBag
        The maps concatenated along a new leading axis, reordered so that
        the offsets ascend.
    """
    maps = list(per_image_maps)
    offsets = [int(o) for o in offsets]
    if not maps:
        raise ContractError("a feature bag needs at least one map")
    if len(maps) != len(offsets):
        raise ContractError(f"{len(maps)} maps given with {len(offsets)} offsets")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise DimensionError("bag members differ in shape", shape, m.shape)
    if len(set(offsets)) != len(offsets):
        raise ContractError(f"bag offsets must be unique, got {offsets}")
    if 0 not in offsets:
        raise ContractError("bag offsets must contain the target offset 0")

    order = sorted(range(len(offsets)), key=lambda i: offsets[i])
    stacked = ops.stack([maps[i] for i in order])
    return FeatureBag(stacked, [offsets[i] for i in order])
