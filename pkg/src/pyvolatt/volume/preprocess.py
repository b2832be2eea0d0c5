"""CT preprocessing: HU windowing, slice-thickness resampling, in-plane
rescaling and 2.5D slab / feature-bag grouping."""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from pyvolatt.errors import ConfigurationError, ContractError, DimensionError
from pyvolatt.tensor import Tensor
from pyvolatt.volume.volume import Volume

logger = logging.getLogger(__name__)

DEFAULT_HU_WINDOW = (-200.0, 300.0)
DEFAULT_DZ = 1.5
DEFAULT_SIZE = 64


def clamp_normalize(
    v: Volume, lo: float = DEFAULT_HU_WINDOW[0], hi: float = DEFAULT_HU_WINDOW[1]
) -> Volume:
    """Clamps HU values to [lo, hi] and maps them affinely onto [0, 1].

    Parameters
    ----------
    v : Volume
        An HU-space volume.

    lo : float, optional
        The lower HU bound. The default is -200.

    hi : float, optional
        The upper HU bound. The default is 300.

    Returns
    -------
    Volume
        The unit-space volume (clip(v, lo, hi) - lo) / (hi - lo).
    """
    if lo >= hi:
        raise ConfigurationError(f"clamp window needs lo < hi, got [{lo}, {hi}]")
    if v.intensity_space != "HU":
        raise ContractError("clamp_normalize expects an HU-space volume")
    values = (np.clip(v.values, lo, hi) - lo) / (hi - lo)
    return Volume(values, v.spacing, "unit")


def denormalize(
    v: Volume, lo: float = DEFAULT_HU_WINDOW[0], hi: float = DEFAULT_HU_WINDOW[1]
) -> Volume:
    """Maps a unit-space volume back to HU (inverse of the clamp affine)."""
    if lo >= hi:
        raise ConfigurationError(f"clamp window needs lo < hi, got [{lo}, {hi}]")
    if v.intensity_space != "unit":
        raise ContractError("denormalize expects a unit-space volume")
    return Volume(lo + v.values * (hi - lo), v.spacing, "HU")


def _lerp(a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
    # a + t(b - a) keeps constant signals exact
    return a + t * (b - a)


def resample_z(v: Volume, target_dz: float = DEFAULT_DZ) -> Volume:
    """Linearly resamples a volume along z to a new slice spacing.

    The new grid starts at the first slice and has
    floor((Z - 1) · dz / target_dz) + 1 slices.
    """
    if target_dz <= 0:
        raise ConfigurationError(f"target slice spacing must be positive, got {target_dz}")
    if v.Z < 2:
        raise ContractError("cannot resample a single-slice volume along z")
    if v.dz == target_dz:
        return Volume(v.values.copy(), v.spacing, v.intensity_space)

    extent = (v.Z - 1) * v.dz / target_dz
    new_z = int(np.floor(extent + 1e-9)) + 1
    pos = np.arange(new_z) * (target_dz / v.dz)
    i0 = np.minimum(np.floor(pos).astype(int), v.Z - 1)
    i1 = np.minimum(i0 + 1, v.Z - 1)
    t = (pos - i0)[:, None, None]
    values = _lerp(v.values[i0], v.values[i1], t)
    if v.intensity_space == "unit":
        values = np.clip(values, 0.0, 1.0)
    spacing = (float(target_dz),) + v.spacing[1:]
    logger.debug(f"Resampled z from {v.Z}@{v.dz}mm to {new_z}@{target_dz}mm.")
    return Volume(values, spacing, v.intensity_space)


def rescale_xy(slice_: np.ndarray, target: int = DEFAULT_SIZE) -> np.ndarray:
    """Bilinearly resamples an H×W slice to target×target.

    Corner pixels are aligned, so a same-size rescale is the identity.
    """
    slice_ = np.asarray(slice_, dtype=np.float64)
    if slice_.ndim != 2:
        raise DimensionError("rescale_xy needs an H×W slice", slice_.shape)
    h, w = slice_.shape
    if h < 2 or w < 2:
        raise ContractError(f"cannot rescale a degenerate {h}×{w} slice")
    if target < 2:
        raise ConfigurationError(f"rescale target must be at least 2, got {target}")
    if (h, w) == (target, target):
        return slice_.copy()

    ys = np.linspace(0.0, h - 1, target)
    xs = np.linspace(0.0, w - 1, target)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    top = _lerp(slice_[y0][:, x0], slice_[y0][:, x0 + 1], tx)
    bottom = _lerp(slice_[y0 + 1][:, x0], slice_[y0 + 1][:, x0 + 1], tx)
    return _lerp(top, bottom, ty)


def rescale_volume_xy(v: Volume, target: int = DEFAULT_SIZE) -> Volume:
    """Applies :func:`rescale_xy` to every slice, updating in-plane spacing
    so the physical extent is preserved."""
    _, h, w = v.dims
    if (h, w) == (target, target):
        return Volume(v.values.copy(), v.spacing, v.intensity_space)
    values = np.stack([rescale_xy(s, target) for s in v.values])
    if v.intensity_space == "unit":
        values = np.clip(values, 0.0, 1.0)
    dz, dy, dx = v.spacing
    spacing = (dz, dy * (h - 1) / (target - 1), dx * (w - 1) / (target - 1))
    return Volume(values, spacing, v.intensity_space)


def preprocess_volume(
    v: Volume,
    lo: float = DEFAULT_HU_WINDOW[0],
    hi: float = DEFAULT_HU_WINDOW[1],
    target_dz: float = DEFAULT_DZ,
    size: int = DEFAULT_SIZE,
) -> Volume:
    """Clamp/normalise (HU inputs only), resample along z, then rescale
    each slice. A unit-space input is not re-windowed."""
    if v.intensity_space == "HU":
        v = clamp_normalize(v, lo, hi)
    if v.Z > 1:
        v = resample_z(v, target_dz)
    if size is not None:
        v = rescale_volume_xy(v, size)
    return v


@dataclass
class Slab25D:
    """A 2.5D image: three adjacent axial slices stacked as channels.

    Attributes
    ----------
    channels : Tensor
        3×H×W slices (z-1, z, z+1), ascending z.

    center_z : int
        The index of the centre slice.
    """

    channels: Tensor
    center_z: int

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise DimensionError("a 2.5D slab has exactly 3 channels", self.channels.shape)


def stack_25d(v: Volume, z: int) -> Slab25D:
    """Stacks slices (z-1, z, z+1) into a 3-channel image. Neighbours outside
    the volume replicate the boundary slice."""
    if not 0 <= z < v.Z:
        raise ContractError(f"slice index {z} outside [0, {v.Z - 1}]")
    idx = np.clip([z - 1, z, z + 1], 0, v.Z - 1)
    return Slab25D(Tensor(v.values[idx]), z)


def stack_slice_masks(slices: Sequence[np.ndarray]) -> np.ndarray:
    """Stacks per-slice 2D predictions into a 3D mask (z-major)."""
    slices = [np.asarray(s) for s in slices]
    if not slices:
        raise ContractError("no slices to stack")
    for s in slices[1:]:
        if s.shape != slices[0].shape:
            raise DimensionError("slice masks differ in shape", slices[0].shape, s.shape)
    return np.stack(slices)


@dataclass
class BagSpec:
    """Feature bag grouping: N images at symmetric offsets around the target.

    Attributes
    ----------
    n_images : int
        The bag size N (odd).

    offsets : list of int
        -(N-1)/2, ..., +(N-1)/2.

    boundary : str
        Boundary policy; only 'replicate' is supported.
    """

    n_images: int = 9
    offsets: List[int] = field(default=None)
    boundary: str = "replicate"

    def __post_init__(self):
        if self.n_images < 1 or self.n_images % 2 == 0:
            raise ConfigurationError(f"bag size must be odd and positive, got {self.n_images}")
        half = (self.n_images - 1) // 2
        expected = list(range(-half, half + 1))
        if self.offsets is None:
            self.offsets = expected
        elif list(self.offsets) != expected:
            raise ConfigurationError(f"bag offsets must be {expected}, got {self.offsets}")
        if self.boundary != "replicate":
            raise ConfigurationError(f"unsupported boundary policy {self.boundary!r}")

    @classmethod
    def from_size(cls, n_images: int) -> "BagSpec":
        return cls(n_images=n_images)


def make_bag_indices(z: int, spec: BagSpec, Z: int) -> List[int]:
    """Centre slice indices of the bag around slice z, clamped to [0, Z-1]."""
    return [int(min(max(z + o, 0), Z - 1)) for o in spec.offsets]
