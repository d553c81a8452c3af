"""RVOL volume files and canonical volume dumps."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ctscroll.errors import VolumeIOError
from ctscroll.preprocess.volume import CanonicalVolume, RawVolume

logger = logging.getLogger(__name__)

_RVOL_DTYPE = np.dtype("<i2")
_CANONICAL_DTYPE = np.dtype("<f4")


class RVolManifest(BaseModel):
    """JSON manifest pointing at a little-endian int16 Z-major voxel blob."""

    shape: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    dtype: str = Field(default="i16", pattern="^i16$")
    data_file: str


def write_rvol(volume: RawVolume, manifest_path: str | Path) -> Path:
    """Write `volume` as `<stem>.json` + `<stem>.bin`; voxels are rounded to int16."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    data_path = manifest_path.with_suffix(".bin")

    voxels = np.rint(volume.voxels).astype(_RVOL_DTYPE)
    manifest = RVolManifest(
        shape=volume.shape,
        spacing_mm=volume.spacing,
        data_file=data_path.name,
    )
    try:
        data_path.write_bytes(voxels.tobytes(order="C"))
        manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"Failed to write RVOL {manifest_path}: {e}") from e
    return manifest_path


def read_rvol(manifest_path: str | Path) -> RawVolume:
    """Load an RVOL manifest and its voxel blob (resolved relative to the manifest)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise VolumeIOError(f"Volume manifest not found: {manifest_path}")
    try:
        manifest = RVolManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise VolumeIOError(f"Malformed RVOL manifest {manifest_path}: {e}") from e

    data_path = manifest_path.parent / manifest.data_file
    if not data_path.exists():
        raise VolumeIOError(f"Voxel data file not found: {data_path}")
    raw = np.frombuffer(data_path.read_bytes(), dtype=_RVOL_DTYPE)
    expected = int(np.prod(manifest.shape))
    if raw.size != expected:
        raise VolumeIOError(
            f"{data_path.name} holds {raw.size} voxels, manifest shape needs {expected}"
        )
    logger.debug("Loaded %s: shape=%s spacing=%s", manifest_path.name, manifest.shape,
                 manifest.spacing_mm)
    return RawVolume(raw.reshape(manifest.shape).astype(np.int16), manifest.spacing_mm)


def write_canonical(volume: CanonicalVolume, out_path: str | Path) -> Path:
    """Dump a canonical volume as float32 LE plus a JSON sidecar with shape and statistics."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = out_path.with_suffix(".json")
    try:
        out_path.write_bytes(volume.voxels.astype(_CANONICAL_DTYPE).tobytes(order="C"))
        sidecar.write_text(
            json.dumps(
                {
                    "shape": list(volume.shape),
                    "dtype": "f32",
                    "normalization": {k: list(v) for k, v in volume.normalization.items()},
                },
                indent=2,
            ),
            encoding="utf-8",
        )
    except OSError as e:
        raise VolumeIOError(f"Failed to write canonical volume {out_path}: {e}") from e
    return out_path


def read_canonical(path: str | Path) -> CanonicalVolume:
    """Inverse of `write_canonical`."""
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists() or not sidecar.exists():
        raise VolumeIOError(f"Canonical volume or sidecar missing: {path}")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        voxels = np.frombuffer(path.read_bytes(), dtype=_CANONICAL_DTYPE).reshape(meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise VolumeIOError(f"Unreadable canonical volume {path}: {e}") from e
    norm = {k: tuple(v) for k, v in meta.get("normalization", {}).items()}
    return CanonicalVolume(voxels=voxels.astype(np.float64), normalization=norm)
