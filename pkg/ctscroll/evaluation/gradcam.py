"""Grad-CAM over the last backbone feature map, per triplet, plus PGM / montage export."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from ctscroll.errors import ShapeError, VolumeIOError
from ctscroll.model.network import CTScroll, ModelInput

logger = logging.getLogger(__name__)


def grad_cam(model: CTScroll, x: ModelInput, target_label: int) -> np.ndarray:
    """
    Heatmaps of shape (n_triplets, H', W') for one triplet stack.

    α_k = spatial mean of ∂ŷ_c/∂A_k; map = ReLU(Σ_k α_k A_k). Gradients reach A
    through the token interactions and the head.
    """
    if not 0 <= target_label < model.cfg.n_labels:
        raise ShapeError(f"Label {target_label} out of range for {model.cfg.n_labels} labels")
    trace = model.trace(x)
    if trace.logits.shape[0] != 1:
        raise ShapeError("grad_cam takes a single triplet stack")
    fm = trace.feature_map.retain_grad()
    trace.logits[0, target_label].backward()
    grads = fm.grad if fm.grad is not None else np.zeros_like(fm.data)
    model.zero_grad()

    activations = fm.data[0].astype(np.float64)  # (n, C, H', W')
    alpha = grads[0].astype(np.float64).mean(axis=(-2, -1))  # (n, C)
    cam = np.einsum("nc,nchw->nhw", alpha, activations)
    return np.maximum(cam, 0.0)


def upsample_nearest(heatmap: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of one (H', W') map to (size, size), for rendering only."""
    img = Image.fromarray(heatmap.astype(np.float32))
    return np.asarray(img.resize((size, size), resample=Image.Resampling.NEAREST))


def _to_gray(heatmap: np.ndarray, peak: float) -> np.ndarray:
    if peak <= 0.0:
        return np.zeros(heatmap.shape, dtype=np.uint8)
    return np.clip(np.rint(255.0 * heatmap / peak), 0, 255).astype(np.uint8)


def export_gradcam(
    heatmaps: np.ndarray,
    out_dir: str | Path,
    label: int,
    label_name: str,
    render_size: int | None = None,
) -> Path:
    """
    Write one PGM per triplet, a JSON index and a montage PNG; returns the index path.

    Gray levels share one scale across the volume (0 → black, volume max → white).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    peak = float(heatmaps.max()) if heatmaps.size else 0.0
    entries = []
    try:
        for i, hm in enumerate(heatmaps):
            shown = upsample_nearest(hm, render_size) if render_size else hm
            name = f"label{label}_triplet{i:03d}.pgm"
            Image.fromarray(_to_gray(shown, peak)).save(out / name)
            flat = int(np.argmax(hm))
            entries.append({
                "triplet": i,
                "file": name,
                "max": float(hm.max()),
                "mean": float(hm.mean()),
                "argmax": list(np.unravel_index(flat, hm.shape)),
            })
        index = out / f"label{label}_index.json"
        index.write_text(json.dumps({
            "label": label,
            "label_name": label_name,
            "shape": list(heatmaps.shape),
            "peak": peak,
            "hottest_triplet": int(np.argmax(heatmaps.reshape(len(heatmaps), -1).max(axis=1))),
            "triplets": entries,
        }, indent=2, default=int))
    except OSError as exc:
        raise VolumeIOError(f"Cannot write Grad-CAM export to {out}: {exc}") from exc
    plot_montage(heatmaps, out / f"label{label}_montage.png", title=f"Grad-CAM: {label_name}")
    logger.info("Grad-CAM for %s → %s (%d triplets)", label_name, out, len(heatmaps))
    return index


def plot_montage(heatmaps: np.ndarray, out_path: Path, title: str = "") -> Path | None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib not installed, skipping Grad-CAM montage")
        return None

    n = len(heatmaps)
    cols = min(n, 8)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(1.6 * cols, 1.6 * rows + 0.4), squeeze=False)
    vmax = max(float(heatmaps.max()), 1e-12)
    for ax in axes.flat:
        ax.axis("off")
    for i, hm in enumerate(heatmaps):
        ax = axes.flat[i]
        ax.imshow(hm, cmap="inferno", vmin=0.0, vmax=vmax, interpolation="nearest")
        ax.set_title(str(i), fontsize=7)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def cam_hits(heatmaps: np.ndarray, positive_triplets: set[int]) -> bool:
    """Whether the hottest triplet is one of the anomaly-bearing triplets."""
    hottest = int(np.argmax(heatmaps.reshape(len(heatmaps), -1).max(axis=1)))
    return hottest in positive_triplets
