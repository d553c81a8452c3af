"""
CKPT format: a JSON manifest plus one little-endian float32 blob.

The manifest records the model config, the optimizer step and, per parameter, its
dot-separated path, shape, dtype ("f32") and byte range inside the blob.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ValidationError

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.model.config import CTScrollConfig
from ctscroll.model.network import CTScroll

logger = logging.getLogger(__name__)

CKPT_FORMAT = "CKPT"
_BLOB_DTYPE = np.dtype("<f4")


class TensorEntry(BaseModel):
    name: str
    shape: list[int]
    dtype: Literal["f32"] = "f32"
    offset: int
    nbytes: int


class CheckpointManifest(BaseModel):
    format: Literal["CKPT"] = CKPT_FORMAT
    config: CTScrollConfig
    step: int = 0
    data_file: str
    tensors: list[TensorEntry]


def _blob_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(model: CTScroll, path: str | Path, step: int = 0) -> Path:
    """Write `<path>` (manifest) and `<path stem>.bin`; returns the manifest path."""
    manifest_path = Path(path)
    blob_path = _blob_path(manifest_path)
    entries: list[TensorEntry] = []
    chunks: list[bytes] = []
    offset = 0
    for name, param in model.named_parameters():
        raw = np.ascontiguousarray(param.data, dtype=_BLOB_DTYPE).tobytes()
        entries.append(TensorEntry(name=name, shape=list(param.shape), offset=offset, nbytes=len(raw)))
        chunks.append(raw)
        offset += len(raw)
    manifest = CheckpointManifest(config=model.cfg, step=step, data_file=blob_path.name, tensors=entries)
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        blob_path.write_bytes(b"".join(chunks))
        manifest_path.write_text(manifest.model_dump_json(indent=2))
    except OSError as exc:
        raise VolumeIOError(f"Cannot write checkpoint {manifest_path}: {exc}") from exc
    logger.info("Checkpoint step %d → %s (%d tensors, %d bytes)", step, manifest_path, len(entries), offset)
    return manifest_path


def read_checkpoint(path: str | Path) -> tuple[CheckpointManifest, dict[str, np.ndarray]]:
    """Parse a CKPT manifest and slice its blob into named float32 arrays."""
    manifest_path = Path(path)
    try:
        manifest = CheckpointManifest.model_validate(json.loads(manifest_path.read_text()))
        blob = (manifest_path.parent / manifest.data_file).read_bytes()
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise VolumeIOError(f"Cannot read checkpoint {manifest_path}: {exc}") from exc

    state: dict[str, np.ndarray] = {}
    for entry in manifest.tensors:
        expected = int(np.prod(entry.shape, dtype=np.int64)) * _BLOB_DTYPE.itemsize
        if entry.nbytes != expected or entry.offset + entry.nbytes > len(blob):
            raise VolumeIOError(f"Checkpoint entry {entry.name} has an inconsistent byte range")
        arr = np.frombuffer(blob, dtype=_BLOB_DTYPE, count=expected // _BLOB_DTYPE.itemsize,
                            offset=entry.offset)
        state[entry.name] = arr.reshape(entry.shape).astype(np.float32)
    return manifest, state


def load_checkpoint(path: str | Path, dtype: np.dtype | type = np.float32) -> tuple[CTScroll, int]:
    """Rebuild the model described by a checkpoint; returns (model, step)."""
    manifest, state = read_checkpoint(path)
    model = CTScroll(manifest.config, dtype=dtype)
    model.load_state_dict(state, strict=True)
    return model, manifest.step


def import_backbone_weights(model: CTScroll, path: str | Path) -> list[str]:
    """Copy every `backbone.*` tensor of a checkpoint into `model`; shapes must match."""
    _, state = read_checkpoint(path)
    prefix = "backbone."
    own = {name for name, _ in model.named_parameters() if name.startswith(prefix)}
    subset = {name: arr for name, arr in state.items() if name in own}
    if not subset:
        raise ShapeError(f"No backbone tensors in {path} match this model")
    loaded = model.load_state_dict(subset, strict=False)
    logger.info("Imported %d/%d backbone tensors from %s", len(loaded), len(own), path)
    return loaded
