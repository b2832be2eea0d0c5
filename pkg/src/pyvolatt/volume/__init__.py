"""Volume I/O and CT preprocessing."""

from .volume import (
    BACKGROUND,
    LESION,
    LIVER,
    Volume,
    lesion_mask,
    liver_mask,
    read_mask,
    read_volume,
    write_mask,
    write_volume,
)
from .preprocess import (
    DEFAULT_DZ,
    DEFAULT_HU_WINDOW,
    DEFAULT_SIZE,
    BagSpec,
    Slab25D,
    clamp_normalize,
    denormalize,
    make_bag_indices,
    preprocess_volume,
    resample_z,
    rescale_volume_xy,
    rescale_xy,
    stack_25d,
    stack_slice_masks,
)
