"""
Synthetic phantoms whose labels need short- or long-range reasoning along z.

HU encoding: tissue base −500, local blobs +300, pair markers ±150, noise σ = 20.
Label 0 is a local blob, label 1 a same-polarity marker pair far apart in z,
label 2 a steep band along z, label 3 a negative control that is never set.
"""

from __future__ import annotations

import logging
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ctscroll.config import get_settings
from ctscroll.errors import ConfigError
from ctscroll.preprocess.volume import TARGET_SPACING, RawVolume

logger = logging.getLogger(__name__)

BASE_HU = -500.0
BLOB_HU = 300.0
MARKER_HU = 150.0
NOISE_SIGMA = 20.0
BLOB_RADIUS = 4
MARKER_RADIUS = 2
BAND_HALF_SIZE = 10

# Band steps in HU per slice; label 2 is set when the step reaches the threshold.
BAND_STEP_THRESHOLD = 40.0
STEEP_BAND = (60.0, 4)   # (step, width): tent peak 120 HU
GENTLE_BAND = (20.0, 12)  # same peak, a third of the slope

N_LABELS = 4
MAX_PLACEMENT_ATTEMPTS = 200


class AnomalyKind(str, Enum):
    LOCAL_BLOB = "local_blob"
    LONG_RANGE_PAIR = "long_range_pair"
    DECOY_PAIR = "decoy_pair"
    BAND_GRADIENT = "band_gradient"


_PAIR_KINDS = (AnomalyKind.LONG_RANGE_PAIR, AnomalyKind.DECOY_PAIR)


class Anomaly(BaseModel):
    """
    One planted structure.

    Blobs and pair markers are voxel-space spheres of `radius` centred at each z in
    `z_positions`. A band is a tent profile starting at `z_positions[0]` spanning
    `width` slices, rising and falling by `intensity` HU per slice over a square of
    half-size `radius`. Decoy pairs flip the sign of their second marker.
    """

    kind: AnomalyKind
    intensity: float
    z_positions: list[int]
    radius: int = Field(default=BLOB_RADIUS, ge=1)
    center_yx: tuple[int, int] | None = None
    width: int = Field(default=STEEP_BAND[1], ge=1)

    @model_validator(mode="after")
    def _check(self) -> Anomaly:
        expected = 2 if self.kind in _PAIR_KINDS else 1
        if len(self.z_positions) != expected:
            raise ValueError(f"{self.kind.value} needs {expected} z position(s), got {self.z_positions}")
        return self

    def z_extent(self) -> list[tuple[int, int]]:
        if self.kind is AnomalyKind.BAND_GRADIENT:
            z0 = self.z_positions[0]
            return [(z0, z0 + self.width - 1)]
        return [(z - self.radius, z + self.radius) for z in self.z_positions]

    def boxes(self) -> list[tuple[tuple[int, int], tuple[int, int], tuple[int, int]]]:
        """Inclusive (z, y, x) bounding boxes of every component."""
        cy, cx = self.center_yx or (0, 0)
        r = self.radius
        return [(zr, (cy - r, cy + r), (cx - r, cx + r)) for zr in self.z_extent()]


class PhantomSpec(BaseModel):
    grid: tuple[int, int, int] = (24, 64, 64)
    anomalies: list[Anomaly] = Field(default_factory=list)
    noise_sigma: float = Field(default=NOISE_SIGMA, ge=0.0)
    seed: int = Field(default=0, ge=0)
    base_hu: float = BASE_HU
    long_range_distance: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> PhantomSpec:
        if any(g < 1 for g in self.grid):
            raise ValueError(f"Grid dims must be positive, got {self.grid}")
        for anomaly in self.anomalies:
            if any(not 0 <= z < self.grid[0] for z in anomaly.z_positions):
                raise ValueError(f"{anomaly.kind.value} z positions {anomaly.z_positions} fall outside the grid")
        return self

    @property
    def pair_distance(self) -> int:
        return self.long_range_distance or get_settings().long_range_distance


# ── Placement ───────────────────────────────────────────────────
def _boxes_intersect(a: tuple, b: tuple) -> bool:
    return all(lo1 <= hi2 and lo2 <= hi1 for (lo1, hi1), (lo2, hi2) in zip(a, b))


def _overlaps(anomaly: Anomaly, others: list[Anomaly]) -> bool:
    return any(
        _boxes_intersect(box, other_box)
        for other in others
        for box in anomaly.boxes()
        for other_box in other.boxes()
    )


def _random_yx(rng: np.random.Generator, grid: tuple[int, int, int], radius: int) -> tuple[int, int]:
    lo = radius
    return (int(rng.integers(lo, max(lo + 1, grid[1] - radius))),
            int(rng.integers(lo, max(lo + 1, grid[2] - radius))))


def _random_z(rng: np.random.Generator, anomaly: Anomaly, spec: PhantomSpec) -> list[int]:
    depth = spec.grid[0]
    if anomaly.kind in _PAIR_KINDS:
        gap = spec.pair_distance
        if gap > depth - 1:
            raise ConfigError(f"A {depth}-slice grid cannot hold markers {gap} slices apart")
        z1 = int(rng.integers(0, depth - gap))
        z2 = int(rng.integers(z1 + gap, depth))
        return [z1, z2]
    if anomaly.kind is AnomalyKind.BAND_GRADIENT:
        return [int(rng.integers(0, max(1, depth - anomaly.width + 1)))]
    return [int(rng.integers(0, depth))]


def place_anomalies(spec: PhantomSpec) -> list[Anomaly]:
    """
    Resolve missing in-plane centres and re-sample positions of overlapping anomalies.

    Placement draws from a generator seeded by `spec.seed`, so it is deterministic.
    """
    rng = np.random.default_rng([spec.seed, 0])
    placed: list[Anomaly] = []
    for anomaly in spec.anomalies:
        current = anomaly
        if current.center_yx is None:
            current = current.model_copy(update={"center_yx": _random_yx(rng, spec.grid, current.radius)})
        attempts = 0
        while _overlaps(current, placed):
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise ConfigError(f"Could not place {anomaly.kind.value} without overlap")
            current = current.model_copy(update={
                "z_positions": _random_z(rng, current, spec),
                "center_yx": _random_yx(rng, spec.grid, current.radius),
            })
        if attempts:
            logger.warning("Re-sampled %s after %d overlapping placement(s)", anomaly.kind.value, attempts)
        placed.append(current)
    return placed


# ── Rendering ───────────────────────────────────────────────────
def _sphere(grid: tuple[int, int, int], center: tuple[int, int, int], radius: int) -> np.ndarray:
    zz, yy, xx = np.ogrid[: grid[0], : grid[1], : grid[2]]
    cz, cy, cx = center
    return (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def band_profile(step: float, width: int) -> np.ndarray:
    """Tent profile: step·min(k + 1, width − k) for k in 0..width−1."""
    k = np.arange(width)
    return step * np.minimum(k + 1, width - k).astype(np.float64)


def _render(anomaly: Anomaly, grid: tuple[int, int, int], field: np.ndarray) -> None:
    cy, cx = anomaly.center_yx or (grid[1] // 2, grid[2] // 2)
    if anomaly.kind is AnomalyKind.BAND_GRADIENT:
        r = anomaly.radius
        ys = slice(max(cy - r, 0), min(cy + r + 1, grid[1]))
        xs = slice(max(cx - r, 0), min(cx + r + 1, grid[2]))
        z0 = anomaly.z_positions[0]
        for k, value in enumerate(band_profile(anomaly.intensity, anomaly.width)):
            if z0 + k < grid[0]:
                field[z0 + k, ys, xs] += value
        return
    signs = [1.0, -1.0] if anomaly.kind is AnomalyKind.DECOY_PAIR else [1.0] * len(anomaly.z_positions)
    for z, sign in zip(anomaly.z_positions, signs):
        field[_sphere(grid, (z, cy, cx), anomaly.radius)] += sign * anomaly.intensity


def phantom_labels(anomalies: list[Anomaly], pair_distance: int) -> np.ndarray:
    """Both cut-offs are inclusive: a pair exactly `pair_distance` apart counts, as does a band step of exactly
    BAND_STEP_THRESHOLD."""
    labels = np.zeros(N_LABELS, dtype=np.int64)
    for a in anomalies:
        if a.kind is AnomalyKind.LOCAL_BLOB:
            labels[0] = 1
        elif a.kind is AnomalyKind.LONG_RANGE_PAIR and abs(a.z_positions[1] - a.z_positions[0]) >= pair_distance:
            labels[1] = 1
        elif a.kind is AnomalyKind.BAND_GRADIENT and abs(a.intensity) >= BAND_STEP_THRESHOLD:
            labels[2] = 1
    return labels


def synth_volume(spec: PhantomSpec) -> tuple[RawVolume, np.ndarray, list[Anomaly]]:
    """Render a phantom; returns the int16 HU volume, its label vector and the placed anomalies."""
    anomalies = place_anomalies(spec)
    field = np.full(spec.grid, spec.base_hu, dtype=np.float64)
    for anomaly in anomalies:
        _render(anomaly, spec.grid, field)
    if spec.noise_sigma > 0:
        field += np.random.default_rng([spec.seed, 1]).normal(0.0, spec.noise_sigma, size=spec.grid)
    voxels = np.clip(np.rint(field), -32768, 32767).astype(np.int16)
    return RawVolume(voxels, TARGET_SPACING), phantom_labels(anomalies, spec.pair_distance), anomalies


# ── Random specs for datasets ───────────────────────────────────
def random_phantom_spec(
    targets: tuple[bool, bool, bool],
    seed: int,
    grid: tuple[int, int, int] = (24, 64, 64),
    long_range_distance: int | None = None,
    polarity: float | None = None,
    pair_seed: int | None = None,
) -> PhantomSpec:
    """
    Spec whose labels 0..2 equal `targets`.

    Every phantom carries one far marker pair (same polarity when label 1 is set,
    opposite otherwise) and one band (steep when label 2 is set, gentle otherwise),
    so neither label can be read off the mere presence of its structure. The pair
    geometry is drawn from `pair_seed` (default `seed`); phantoms sharing it place
    their markers identically. The pair is listed first and is never re-sampled.
    """
    rng = np.random.default_rng([seed, 2])
    pair_rng = np.random.default_rng([seed if pair_seed is None else pair_seed, 3])
    base = PhantomSpec(grid=grid, seed=seed, long_range_distance=long_range_distance)
    wants_blob, wants_pair, wants_steep = targets
    if polarity is None:
        polarity = 1.0 if pair_rng.random() < 0.5 else -1.0

    pair_kind = AnomalyKind.LONG_RANGE_PAIR if wants_pair else AnomalyKind.DECOY_PAIR
    pair = Anomaly(kind=pair_kind, intensity=float(np.sign(polarity)) * MARKER_HU,
                   z_positions=[0, 0], radius=MARKER_RADIUS)
    anomalies = [pair.model_copy(update={
        "z_positions": _random_z(pair_rng, pair, base),
        "center_yx": _random_yx(pair_rng, grid, pair.radius),
    })]

    drafts: list[Anomaly] = []
    if wants_blob:
        drafts.append(Anomaly(kind=AnomalyKind.LOCAL_BLOB, intensity=BLOB_HU, z_positions=[0], radius=BLOB_RADIUS))
    step, width = STEEP_BAND if wants_steep else GENTLE_BAND
    drafts.append(Anomaly(kind=AnomalyKind.BAND_GRADIENT, intensity=step, z_positions=[0],
                          radius=BAND_HALF_SIZE, width=min(width, grid[0])))
    anomalies += [
        a.model_copy(update={"z_positions": _random_z(rng, a, base),
                             "center_yx": _random_yx(rng, grid, a.radius)})
        for a in drafts
    ]
    return base.model_copy(update={"anomalies": anomalies})
