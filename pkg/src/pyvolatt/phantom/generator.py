"""Synthetic liver phantoms with persistent lesions and short-lived
distractors.

A lesion is an ellipsoid that persists over ``lesion_slices`` consecutive
axial slices. A distractor has the same in-plane look as a lesion but only
its central ``distractor_slices`` cross-sections are rendered, so inside a
single 2.5D slab it cannot be told apart from a lesion centre while its
z-extent gives it away.

Distractors default to 3 slices rather than a single one: a one-slice blob
is dark in both neighbouring channels of its own slab, so a per-slab model
could already reject it.
"""

import logging
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from pyvolatt.errors import ConfigurationError, ContractError
from pyvolatt.volume.volume import LESION, LIVER, Volume, write_mask, write_volume

logger = logging.getLogger(__name__)

PLACEMENT_TRIES = 200
BLOB_GAP = 2


@dataclass
class PhantomConfig:
    """Phantom generation settings.

    Attributes
    ----------
    grid : tuple of int
        The (Z, Y, X) voxel grid. The default is (32, 64, 64).

    spacing_mm : tuple of float
        The (dz, dy, dx) voxel spacing. The default is (1.5, 1.0, 1.0).

    n_lesions : int
        Number of lesions. The default is 3.

    lesion_radius_mm : tuple of float
        In-plane radius range of lesions and distractors. The default is
        (3.0, 9.0).

    lesion_slices : tuple of int
        Range of lesion z-persistence in slices (odd values are used). The
        default is (7, 11).

    distractor_rate : float
        Poisson rate of distractors per axial slice. The default is 0.15.

    distractor_slices : int
        z-persistence of distractors. The default is 3, the depth of a 2.5D
        slab.

    noise_sigma : float
        Standard deviation of additive Gaussian noise. The default is 0.05.

    seed : int
        Random seed; the phantom is a pure function of this configuration.
    """

    grid: Tuple[int, int, int] = (32, 64, 64)
    spacing_mm: Tuple[float, float, float] = (1.5, 1.0, 1.0)
    n_lesions: int = 3
    lesion_radius_mm: Tuple[float, float] = (3.0, 9.0)
    lesion_slices: Tuple[int, int] = (7, 11)
    distractor_rate: float = 0.15
    distractor_slices: int = 3
    noise_sigma: float = 0.05
    background_level: float = 0.2
    liver_level: float = 0.5
    blob_level: float = 0.8
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.grid) != 3 or min(self.grid) < 1:
            raise ConfigurationError(f"phantom grid must be 3 positive extents, got {self.grid}")
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise ConfigurationError(f"phantom spacing must be positive, got {self.spacing_mm}")
        lo, hi = self.lesion_radius_mm
        if lo <= 0 or hi < lo:
            raise ConfigurationError(f"lesion radii must be positive and ordered, got {(lo, hi)}")
        s_lo, s_hi = self.lesion_slices
        if s_lo < 5 or s_hi < s_lo:
            raise ConfigurationError(
                f"lesions must persist at least 5 slices, got {self.lesion_slices}"
            )
        if self.distractor_slices < 1 or self.distractor_slices >= s_lo:
            raise ConfigurationError(
                f"distractor persistence {self.distractor_slices} must be shorter than "
                f"the shortest lesion ({s_lo} slices)"
            )
        if self.n_lesions < 0 or self.distractor_rate < 0 or self.noise_sigma < 0:
            raise ConfigurationError("lesion count, distractor rate and noise must be >= 0")
        if not self.background_level < self.liver_level < self.blob_level <= 1.0:
            raise ConfigurationError("intensity levels must increase: background < liver < blob")

    @property
    def threshold(self) -> float:
        """Midpoint between liver and blob intensity."""
        return 0.5 * (self.liver_level + self.blob_level)

    def replace(self, **changes) -> "PhantomConfig":
        values = dict(self.__dict__)
        values.update(changes)
        return PhantomConfig(**values)


@dataclass
class Blob:
    """One rendered lesion or distractor."""

    center: Tuple[int, int, int]
    radius_mm: float
    slices: int
    is_lesion: bool


def _liver(cfg: PhantomConfig) -> np.ndarray:
    nz, ny, nx = cfg.grid
    z, y, x = np.ogrid[:nz, :ny, :nx]
    cz, cy, cx = (nz - 1) / 2, (ny - 1) / 2, (nx - 1) / 2
    return (
        ((z - cz) / (0.5 * nz)) ** 2 + ((y - cy) / (0.42 * ny)) ** 2 + ((x - cx) / (0.42 * nx)) ** 2
    ) <= 1.0


def _ellipsoid(cfg: PhantomConfig, center, radius_mm: float, slices: int, keep: int):
    """Voxels of an ellipsoid persisting ``slices`` slices, restricted to
    its central ``keep`` slices. Returns index arrays or None when the
    ellipsoid leaves the grid."""
    dz, dy, dx = cfg.spacing_mm
    half = (slices - 1) // 2
    ry, rx = int(np.ceil(radius_mm / dy)), int(np.ceil(radius_mm / dx))
    cz, cy, cx = center
    lo = np.array([cz - half, cy - ry, cx - rx])
    hi = np.array([cz + half, cy + ry, cx + rx])
    if np.any(lo < 0) or np.any(hi >= np.array(cfg.grid)):
        return None
    z, y, x = np.mgrid[-half : half + 1, -ry : ry + 1, -rx : rx + 1]
    rz = (half + 0.5) * dz
    inside = (z * dz / rz) ** 2 + (y * dy / radius_mm) ** 2 + (x * dx / radius_mm) ** 2 <= 1.0
    kept = (keep - 1) // 2
    inside &= np.abs(z) <= kept
    zz, yy, xx = np.nonzero(inside)
    return zz - half + cz, yy - ry + cy, xx - rx + cx


def _place(cfg, rng, liver, occupied, slices, keep):
    """Draws a blob fully inside the liver, clear of every occupied voxel."""
    nz, ny, nx = cfg.grid
    for _ in range(PLACEMENT_TRIES):
        radius = float(rng.uniform(*cfg.lesion_radius_mm))
        center = (int(rng.integers(nz)), int(rng.integers(ny)), int(rng.integers(nx)))
        voxels = _ellipsoid(cfg, center, radius, slices, keep)
        if voxels is None:
            continue
        if liver[voxels].all() and not occupied[voxels].any():
            return Blob(center, radius, slices, keep == slices), voxels
    return None, None


def gen_phantom(cfg: PhantomConfig, return_blobs: bool = False):
    """Generates a phantom volume and its ground truth labels.

    Parameters
    ----------
    cfg : PhantomConfig
        The generation settings.

    return_blobs : bool, optional
        Also return the list of placed blobs. The default is False.

    Returns
    -------
    volume : Volume
        The unit-space phantom.

    gt : np.ndarray
        uint8 labels: 0 background, 1 liver, 2 lesion. Distractors are
        liver.

    blobs : list of Blob
        Only when return_blobs is True.

    Raises
    ------
    ConfigurationError
        If the lesions cannot be placed inside the liver.
    """
    rng = np.random.default_rng(cfg.seed)
    liver = _liver(cfg)
    occupied = np.zeros(cfg.grid, dtype=bool)
    gap = ndimage.generate_binary_structure(3, 3)
    labels = liver.astype(np.uint8) * LIVER
    blobs_mask = np.zeros(cfg.grid, dtype=bool)
    blobs: List[Blob] = []

    for i in range(cfg.n_lesions):
        slices = int(rng.integers(cfg.lesion_slices[0], cfg.lesion_slices[1] + 1)) | 1
        blob, voxels = _place(cfg, rng, liver, occupied, slices, slices)
        if blob is None:
            raise ConfigurationError(
                f"lesion {i + 1} of {cfg.n_lesions} does not fit the liver of a {cfg.grid} grid"
            )
        labels[voxels] = LESION
        blobs_mask[voxels] = True
        occupied = ndimage.binary_dilation(blobs_mask, gap, iterations=BLOB_GAP)
        blobs.append(blob)

    n_distractors = int(rng.poisson(cfg.distractor_rate * cfg.grid[0]))
    for _ in range(n_distractors):
        slices = int(rng.integers(cfg.lesion_slices[0], cfg.lesion_slices[1] + 1)) | 1
        blob, voxels = _place(cfg, rng, liver, occupied, slices, cfg.distractor_slices)
        if blob is None:
            logger.warning("Could not place a distractor; skipping it.")
            continue
        blobs_mask[voxels] = True
        occupied = ndimage.binary_dilation(blobs_mask, gap, iterations=BLOB_GAP)
        blobs.append(blob)

    values = np.full(cfg.grid, cfg.background_level)
    values[liver] = cfg.liver_level
    values[blobs_mask] = cfg.blob_level
    if cfg.noise_sigma > 0:
        values = values + rng.normal(0.0, cfg.noise_sigma, size=cfg.grid)
    values = np.clip(values, 0.0, 1.0)

    volume = Volume(values, cfg.spacing_mm, "unit")
    logger.debug(
        f"Phantom seed {cfg.seed}: {cfg.n_lesions} lesions, "
        f"{len(blobs) - cfg.n_lesions} distractors."
    )
    if return_blobs:
        return volume, labels, blobs
    return volume, labels


def gen_phantoms(cfg: PhantomConfig, seeds) -> list:
    """Generates one phantom per seed; returns (volume, gt) pairs."""
    return [gen_phantom(cfg.replace(seed=int(s))) for s in seeds]


def persistence_classify(
    values: np.ndarray,
    threshold: float = 0.65,
    min_slices: int = 5,
    denoise: bool = True,
) -> list:
    """Classifies bright blobs by how many slices they persist.

    Parameters
    ----------
    values : np.ndarray
        The Z×Y×X unit-space volume.

    threshold : float, optional
        Blob intensity threshold. The default is 0.65.

    min_slices : int, optional
        Blobs persisting at least this many slices are lesions. The default
        is 5.

    denoise : bool, optional
        Apply an in-plane 3×3 median filter before thresholding. The default
        is True.

    Returns
    -------
    list of (voxels, is_lesion)
        One entry per 26-connected bright component; voxels is an n×3 index
        array.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ContractError(f"persistence_classify needs a 3D volume, got {values.shape}")
    if denoise:
        values = ndimage.median_filter(values, size=(1, 3, 3))
    labels, count = ndimage.label(values > threshold, ndimage.generate_binary_structure(3, 3))
    result = []
    for i, window in enumerate(ndimage.find_objects(labels), start=1):
        extent = window[0].stop - window[0].start
        voxels = np.argwhere(labels[window] == i) + np.array([s.start for s in window])
        result.append((voxels, extent >= min_slices))
    return result


def save_phantom(directory: str, name: str, volume: Volume, gt: np.ndarray) -> tuple:
    """Writes ``<name>.vol`` and ``<name>.msk`` into directory."""
    vol_path = os.path.join(directory, f"{name}.vol")
    msk_path = os.path.join(directory, f"{name}.msk")
    write_volume(vol_path, volume)
    write_mask(msk_path, gt, volume.spacing)
    return vol_path, msk_path
