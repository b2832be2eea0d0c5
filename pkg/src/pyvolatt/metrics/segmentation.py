import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from pyvolatt.errors import ConfigurationError, ContractError, DimensionError

logger = logging.getLogger(__name__)

SMALL_MM = 15.0
LARGE_MM = 30.0
ATTRIBUTION_DILATION = 2
STRATA = ("dice_s", "dice_m", "dice_l")


def dice(a, b) -> float:
    """Dice coefficient 2|a∩b| / (|a| + |b|) of two binary masks.

    Two empty masks score 1.0.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError("dice operands differ in shape", a.shape, b.shape)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def dice_per_case(pred_volumes: Sequence, gt_volumes: Sequence) -> float:
    """Unweighted mean over cases of the per-volume lesion Dice."""
    pred_volumes, gt_volumes = list(pred_volumes), list(gt_volumes)
    if len(pred_volumes) != len(gt_volumes):
        raise ContractError(
            f"{len(pred_volumes)} predicted cases but {len(gt_volumes)} ground truth cases"
        )
    if not pred_volumes:
        raise ContractError("no cases to evaluate")
    scores = [dice(p, g) for p, g in zip(pred_volumes, gt_volumes)]
    return float(np.mean(scores))


def mask_and_postprocess(liver, lesion) -> np.ndarray:
    """Removes lesion voxels outside the liver (voxelwise lesion AND liver)."""
    liver = np.asarray(liver, dtype=bool)
    lesion = np.asarray(lesion, dtype=bool)
    if liver.shape != lesion.shape:
        raise DimensionError("liver and lesion masks differ in shape", liver.shape, lesion.shape)
    return np.logical_and(lesion, liver)


@dataclass
class Lesion:
    """One connected component.

    Attributes
    ----------
    voxels : np.ndarray
        n×ndim integer voxel coordinates.

    diameter_mm : float
        Equivalent-sphere diameter.

    score : float, optional
        Detection confidence in [0, 1] (predictions only).
    """

    voxels: np.ndarray
    diameter_mm: float
    score: Optional[float] = None

    @property
    def size(self) -> int:
        return len(self.voxels)


@dataclass
class LesionSet:
    """Labelled connected components of a mask."""

    lesions: List[Lesion]
    spacing: Tuple[float, ...]
    labels: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.lesions)

    def __iter__(self):
        return iter(self.lesions)


def _structure(ndim: int, connectivity: int) -> np.ndarray:
    faces = {2: 4, 3: 6}
    full = {2: 8, 3: 26}
    if ndim not in faces:
        raise DimensionError(f"connected components need a 2D or 3D mask, got {ndim} axes")
    if connectivity == faces[ndim]:
        return ndimage.generate_binary_structure(ndim, 1)
    if connectivity == full[ndim]:
        return ndimage.generate_binary_structure(ndim, ndim)
    raise ConfigurationError(
        f"connectivity must be {faces[ndim]} or {full[ndim]} for a {ndim}D mask, got {connectivity}"
    )


def lesion_diameter(c, spacing) -> float:
    """Equivalent-sphere diameter 2·(3V/4π)^(1/3) of a component.

    Parameters
    ----------
    c : np.ndarray or int
        The component's voxel coordinates (n×3), or its voxel count.

    spacing : tuple of float
        The voxel spacing (dz, dy, dx) in mm.
    """
    count = int(c) if np.isscalar(c) else len(c)
    if count <= 0:
        raise ContractError("cannot measure the diameter of an empty component")
    volume = count * float(np.prod(spacing))
    return 2.0 * (3.0 * volume / (4.0 * np.pi)) ** (1.0 / 3.0)


def connected_components(mask, connectivity: int = 26, spacing=(1.0, 1.0, 1.0)) -> LesionSet:
    """Labels the connected components of a binary mask.

    Parameters
    ----------
    mask : np.ndarray
        A binary 3D (or 2D) mask.

    connectivity : int, optional
        6 or 26 in 3D (4 or 8 in 2D). The default is 26.

    spacing : tuple of float, optional
        Voxel spacing in mm used for diameters. The default is 1 mm.

    Returns
    -------
    LesionSet
        The components in raster-scan order of their first voxel.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2 and connectivity in (6, 26):
        connectivity = {6: 4, 26: 8}[connectivity]
    structure = _structure(mask.ndim, connectivity)
    labels, count = ndimage.label(mask, structure=structure)
    coords = np.argwhere(labels)
    ids = labels[tuple(coords.T)]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, count + 2))
    lesions = []
    for i in range(count):
        voxels = coords[bounds[i] : bounds[i + 1]]
        lesions.append(Lesion(voxels=voxels, diameter_mm=lesion_diameter(voxels, spacing)))
    return LesionSet(lesions=lesions, spacing=tuple(spacing), labels=labels)


def lesion_dice_scores(
    pred, gt, spacing, dilation: int = ATTRIBUTION_DILATION
) -> List[Tuple[float, float]]:
    """Per-lesion Dice of each ground truth lesion.

    Prediction voxels within a ``dilation``-voxel neighbourhood (26-connected
    dilation) of a ground truth component are attributed to that lesion.

    Returns
    -------
    list of (diameter_mm, dice)
        One entry per ground truth component.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError("prediction and ground truth differ in shape", pred.shape, gt.shape)
    components = connected_components(gt, 26, spacing)
    structure = ndimage.generate_binary_structure(gt.ndim, gt.ndim)
    scores = []
    for index, lesion in enumerate(components, start=1):
        lo = np.maximum(lesion.voxels.min(axis=0) - dilation, 0)
        hi = np.minimum(lesion.voxels.max(axis=0) + dilation + 1, gt.shape)
        window = tuple(slice(a, b) for a, b in zip(lo, hi))
        target = components.labels[window] == index
        region = ndimage.binary_dilation(target, structure=structure, iterations=dilation)
        attributed = np.logical_and(pred[window], region)
        scores.append((lesion.diameter_mm, dice(attributed, target)))
    return scores


def stratum(diameter_mm: float) -> str:
    """Size stratum: small below 15 mm, medium in [15, 30] mm, large above."""
    if diameter_mm < SMALL_MM:
        return "dice_s"
    if diameter_mm <= LARGE_MM:
        return "dice_m"
    return "dice_l"


def stratify(scores: Sequence[Tuple[float, float]]) -> dict:
    """Averages (diameter, dice) pairs within the size strata. Strata
    without lesions are reported as None (absent), not 0."""
    groups = {key: [] for key in STRATA}
    for diameter, score in scores:
        groups[stratum(diameter)].append(score)
    return {key: (float(np.mean(v)) if v else None) for key, v in groups.items()}


def stratified_dice(pred, gt, spacing, dilation: int = ATTRIBUTION_DILATION) -> dict:
    """Size-stratified per-lesion Dice of one case.

    Returns
    -------
    dict
        {'dice_s', 'dice_m', 'dice_l'}; a stratum without lesions is None.
    """
    return stratify(lesion_dice_scores(pred, gt, spacing, dilation))
