"""Volume types and the per-stage preprocessing operations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ctscroll.errors import VolumeError

logger = logging.getLogger(__name__)

HU_WINDOW: tuple[float, float] = (-1000.0, 200.0)
TARGET_SPACING: tuple[float, float, float] = (1.5, 0.75, 0.75)
CANONICAL_SHAPE: tuple[int, int, int] = (240, 480, 480)
TRIPLET_SIZE = 3

# ImageNet statistics, indexed by position within a triplet.
CHANNEL_MEAN: tuple[float, float, float] = (0.485, 0.456, 0.406)
CHANNEL_STD: tuple[float, float, float] = (0.229, 0.224, 0.225)

_INT16_MIN, _INT16_MAX = -32768, 32767


@dataclass
class RawVolume:
    """A CT volume in Hounsfield units with its physical voxel spacing (mm)."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self) -> None:
        if self.voxels.ndim != 3:
            raise VolumeError(f"Volume must be 3D (Z, Y, X), got shape {self.voxels.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"Spacing must be three positive values, got {self.spacing}")
        if self.voxels.size and (
            self.voxels.min() < _INT16_MIN or self.voxels.max() > _INT16_MAX
        ):
            raise VolumeError("Voxel values fall outside the 16-bit HU range")
        self.spacing = tuple(float(s) for s in self.spacing)  # type: ignore[assignment]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)  # type: ignore[return-value]


@dataclass
class CanonicalVolume:
    """Normalized volume on the canonical grid, ready for triplet grouping."""

    voxels: np.ndarray
    normalization: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: {"mean": CHANNEL_MEAN, "std": CHANNEL_STD}
    )

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.voxels.shape)  # type: ignore[return-value]


@dataclass
class TripletStack:
    """Canonical slices grouped three at a time: shape (n, 3, H, W)."""

    triplets: np.ndarray

    @property
    def n_triplets(self) -> int:
        return int(self.triplets.shape[0])


def clip_hu(volume: RawVolume, lo: float = HU_WINDOW[0], hi: float = HU_WINDOW[1]) -> np.ndarray:
    """Clamp every voxel into the HU window [lo, hi]."""
    if lo >= hi:
        raise VolumeError(f"Invalid HU range: lo={lo} must be below hi={hi}")
    return np.clip(volume.voxels.astype(np.float64), lo, hi)


def rescale_unit(
    grid: np.ndarray, lo: float = HU_WINDOW[0], hi: float = HU_WINDOW[1]
) -> np.ndarray:
    """Affinely map [lo, hi] onto [0, 1]."""
    if hi == lo:
        raise VolumeError(f"Degenerate rescale range: lo == hi == {lo}")
    return (np.asarray(grid, dtype=np.float64) - lo) / (hi - lo)


def resample(
    volume: RawVolume, target_spacing: tuple[float, float, float] = TARGET_SPACING
) -> RawVolume:
    """
    Trilinearly resample a volume onto `target_spacing`.

    Output index o along an axis samples input coordinate o * target / input, so the
    first voxel of both grids coincides. Samples beyond the last input voxel clamp to it.
    """
    in_spacing = np.asarray(volume.spacing, dtype=np.float64)
    out_spacing = np.asarray(target_spacing, dtype=np.float64)
    if np.any(out_spacing <= 0):
        raise VolumeError(f"Target spacing must be positive, got {target_spacing}")

    in_shape = np.asarray(volume.shape, dtype=np.float64)
    out_shape = tuple(int(s) for s in np.round(in_shape * in_spacing / out_spacing))
    if any(s == 0 for s in out_shape):
        raise VolumeError(f"Resampling {volume.shape} to {target_spacing} mm gives an empty volume")

    if out_shape == volume.shape and np.allclose(in_spacing, out_spacing):
        return RawVolume(volume.voxels.astype(np.float64), tuple(out_spacing))

    scale = out_spacing / in_spacing
    out = ndimage.affine_transform(
        volume.voxels.astype(np.float64),
        matrix=scale,
        offset=0.0,
        output_shape=out_shape,
        order=1,
        mode="nearest",
    )
    logger.debug("Resampled %s @ %s mm → %s @ %s mm", volume.shape, volume.spacing,
                 out_shape, tuple(out_spacing))
    return RawVolume(out, tuple(out_spacing))


def _axis_plan(size: int, target: int) -> tuple[slice, tuple[int, int]]:
    """Source slice and (before, after) padding that map `size` onto `target`."""
    if size >= target:
        start = (size - target) // 2
        return slice(start, start + target), (0, 0)
    missing = target - size
    return slice(0, size), (missing // 2, missing - missing // 2)


def crop_or_pad(
    grid: np.ndarray, target: tuple[int, int, int] = CANONICAL_SHAPE, fill: float = 0.0
) -> np.ndarray:
    """Center-crop or zero-pad each axis to `target`; odd remainders go to the high side."""
    if grid.size == 0:
        raise VolumeError("Cannot crop or pad an empty grid")
    plans = [_axis_plan(size, t) for size, t in zip(grid.shape, target)]
    cropped = grid[tuple(p[0] for p in plans)]
    pads = [p[1] for p in plans]
    if any(before or after for before, after in pads):
        cropped = np.pad(cropped, pads, mode="constant", constant_values=fill)
    return cropped


def normalize(grid: np.ndarray) -> CanonicalVolume:
    """Standardize slice k with the statistics of channel k mod 3."""
    channel = np.arange(grid.shape[0]) % TRIPLET_SIZE
    mean = np.asarray(CHANNEL_MEAN)[channel][:, None, None]
    std = np.asarray(CHANNEL_STD)[channel][:, None, None]
    return CanonicalVolume(voxels=(grid - mean) / std)


def group_triplets(volume: CanonicalVolume) -> TripletStack:
    """Group consecutive, non-overlapping slice triples into the channel axis."""
    z, y, x = volume.shape
    if z % TRIPLET_SIZE:
        raise VolumeError(f"Slice count {z} is not divisible by {TRIPLET_SIZE}")
    return TripletStack(volume.voxels.reshape(z // TRIPLET_SIZE, TRIPLET_SIZE, y, x))


def ungroup_triplets(stack: TripletStack) -> CanonicalVolume:
    """Inverse of `group_triplets`."""
    n, c, y, x = stack.triplets.shape
    return CanonicalVolume(voxels=stack.triplets.reshape(n * c, y, x))
