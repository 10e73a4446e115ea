"""Image and label map loading."""

from pathlib import Path

import numpy as np
from PIL import Image

from .config import ExportError


def read_image(path: str | Path) -> np.ndarray:
    """Load any PIL-readable image as f32 RGB [H, W, 3] in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def read_label(path: str | Path, class_count: int, void_label: int) -> np.ndarray:
    """Load a label map as i32 [H, W]; every value must be a class id or void.

    Integer modes are taken as-is; anything else is treated as 8-bit ids.
    """
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B"):
                arr = np.asarray(im, dtype=np.int32)
            else:
                arr = np.asarray(im.convert("L"), dtype=np.int32)
    except (OSError, ValueError) as exc:
        raise ExportError(f"cannot read label map {path}: {exc}") from exc
    if arr.ndim != 2:
        raise ExportError(f"label map {path} is not single-channel: shape {arr.shape}")
    vals = np.unique(arr)
    bad = vals[(vals != void_label) & ((vals < 0) | (vals >= class_count))]
    if bad.size:
        raise ExportError(
            f"label map {path} contains ids {bad.tolist()} outside "
            f"[0, {class_count}) and != void {void_label}"
        )
    return arr
