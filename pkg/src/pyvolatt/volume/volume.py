import logging

import numpy as np

from pyvolatt.errors import ConfigurationError, ContractError, ParseError
from pyvolatt.utilities import (
    atomic_write_bytes,
    pack_header_blob,
    raw_array,
    read_blob,
    unpack_header_blob,
)

logger = logging.getLogger(__name__)

INTENSITY_SPACES = ("HU", "unit")

BACKGROUND = 0
LIVER = 1
LESION = 2


class Volume:
    """A scalar 3D grid with physical voxel spacing.

    Parameters
    ----------
    values : np.ndarray
        The Z×Y×X voxel values, z-major.

    spacing : tuple of float
        The voxel spacing (dz, dy, dx) in mm.

    intensity_space : str, optional
        Either 'HU' (Hounsfield units) or 'unit' (normalised to [0, 1]).
        The default is 'HU'.
    """

    def __init__(self, values, spacing, intensity_space: str = "HU") -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3:
            raise ContractError(f"a volume needs 3 axes, got shape {values.shape}")
        spacing = tuple(float(s) for s in spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ConfigurationError(f"voxel spacing must be 3 positive values, got {spacing}")
        if intensity_space not in INTENSITY_SPACES:
            raise ConfigurationError(f"unknown intensity space {intensity_space!r}")
        if intensity_space == "unit" and values.size and (values.min() < 0 or values.max() > 1):
            raise ContractError("unit-space volume has values outside [0, 1]")
        self.values = values
        self.spacing = spacing
        self.intensity_space = intensity_space

    def __repr__(self) -> str:
        return (
            f"Volume(dims={self.dims}, spacing={self.spacing}, "
            f"intensity={self.intensity_space})"
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Volume):
            raise Exception(f"Cannot compare {type(other)} to Volume.")
        return (
            self.spacing == other.spacing
            and self.intensity_space == other.intensity_space
            and np.array_equal(self.values, other.values)
        )

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def Z(self) -> int:
        return self.values.shape[0]

    @property
    def dz(self) -> float:
        return self.spacing[0]


def _header(dims, spacing, dtype: str, intensity: str) -> dict:
    return {
        "dims": [int(d) for d in dims],
        "spacing_mm": [float(s) for s in spacing],
        "dtype": dtype,
        "intensity": intensity,
    }


def volume_bytes(v: Volume) -> bytes:
    header = _header(v.dims, v.spacing, "f32", v.intensity_space)
    return pack_header_blob(header, v.values.astype("<f4").tobytes())


def write_volume(path: str, v: Volume) -> None:
    """Writes a ``.vol`` file: a JSON header line then f32 voxels, z-major."""
    atomic_write_bytes(path, volume_bytes(v))
    logger.debug(f"Wrote {v!r} to {path}.")


def read_volume(path: str) -> Volume:
    """Reads a ``.vol`` file.

    Raises
    ------
    ParseError
        If the header is malformed or the payload size disagrees with it.
    """
    blob = read_blob(path)
    header, payload = unpack_header_blob(blob, required=("dims", "spacing_mm", "dtype", "intensity"))
    offset = len(blob) - len(payload)
    if header["dtype"] != "f32":
        raise ParseError(f"volume dtype must be 'f32', got {header['dtype']!r}", offset=0)
    values = raw_array(payload, "f4", tuple(header["dims"]), offset=offset)
    return Volume(values, header["spacing_mm"], header["intensity"])


def mask_bytes(mask: np.ndarray, spacing) -> bytes:
    header = _header(mask.shape, spacing, "u8", "label")
    return pack_header_blob(header, np.asarray(mask, dtype=np.uint8).tobytes())


def write_mask(path: str, mask: np.ndarray, spacing) -> None:
    """Writes a ``.msk`` label file (0 background, 1 liver, 2 lesion)."""
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise ContractError(f"a mask needs 3 axes, got shape {mask.shape}")
    atomic_write_bytes(path, mask_bytes(mask, spacing))


def read_mask(path: str) -> tuple:
    """Reads a ``.msk`` file.

    Returns
    -------
    mask : np.ndarray
        The uint8 label volume.

    spacing : tuple of float
        The voxel spacing (dz, dy, dx) in mm.
    """
    blob = read_blob(path)
    header, payload = unpack_header_blob(blob, required=("dims", "spacing_mm", "dtype"))
    if header["dtype"] != "u8":
        raise ParseError(f"mask dtype must be 'u8', got {header['dtype']!r}", offset=0)
    mask = raw_array(payload, "u1", tuple(header["dims"]), offset=len(blob) - len(payload))
    return mask.copy(), tuple(float(s) for s in header["spacing_mm"])


def lesion_mask(labels: np.ndarray) -> np.ndarray:
    return np.asarray(labels) == LESION


def liver_mask(labels: np.ndarray) -> np.ndarray:
    """Liver region; lesions lie inside the liver and count towards it."""
    return np.asarray(labels) >= LIVER
