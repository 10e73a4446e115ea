"""TTA member construction and logit realignment.

Members are generated in a fixed order (original, flip, scales, jitter) and
each carries the realignment that maps its logits back onto the original
pixel grid: index reversal for the flip, bilinear resampling for the scale
members, identity for the rest. Realignment must happen before the members
are stacked into an ensemble; the engine consuming the export assumes all
members are pixel-aligned.
"""

from dataclasses import dataclass
from typing import Callable

import matplotlib.colors as mcolors
import numpy as np

from .config import ExportConfig


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror an [H, W, C] image left-right."""
    return np.ascontiguousarray(img[:, ::-1])


def unflip_logits(logits: np.ndarray) -> np.ndarray:
    """Undo a horizontal flip on [C, H, W] logits."""
    return np.ascontiguousarray(logits[:, :, ::-1])


def _resize_planes(planes: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # bilinear with half-pixel centers and clamp-to-edge, [P, H, W] -> [P, oh, ow]
    in_h, in_w = planes.shape[1:]
    if (out_h, out_w) == (in_h, in_w):
        return planes.copy()
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    wy = (ys - y0f)[None, :, None]
    wx = (xs - x0f)[None, None, :]
    y0 = np.clip(y0f, 0, in_h - 1).astype(np.intp)
    x0 = np.clip(x0f, 0, in_w - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, in_h - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, in_w - 1).astype(np.intp)
    p = planes.astype(np.float64)
    top = (1.0 - wx) * p[:, y0[:, None], x0[None, :]] + wx * p[:, y0[:, None], x1[None, :]]
    bot = (1.0 - wx) * p[:, y1[:, None], x0[None, :]] + wx * p[:, y1[:, None], x1[None, :]]
    return ((1.0 - wy) * top + wy * bot).astype(planes.dtype)


def resize_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an [H, W, C] image."""
    return np.moveaxis(_resize_planes(np.moveaxis(img, 2, 0), out_h, out_w), 0, 2)


def resize_logits(logits: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [C, H, W] logits back to the original grid."""
    return _resize_planes(logits, out_h, out_w)


def _gray(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def color_jitter(
    img: np.ndarray,
    rng: np.random.Generator,
    brightness: float,
    contrast: float,
    saturation: float,
    hue: float,
) -> np.ndarray:
    """Photometric jitter with factors drawn uniformly around identity.

    Applied in the fixed order brightness, contrast, saturation, hue; all
    four factors are always drawn so the stream position does not depend on
    which magnitudes are zero. Output is clipped to [0, 1].
    """
    fb = rng.uniform(max(0.0, 1.0 - brightness), 1.0 + brightness)
    fc = rng.uniform(max(0.0, 1.0 - contrast), 1.0 + contrast)
    fs = rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)
    dh = rng.uniform(-hue, hue)

    out = img.astype(np.float64) * fb
    mean = float(_gray(out).mean())
    out = mean + (out - mean) * fc
    g = _gray(out)[..., None]
    out = g + (out - g) * fs
    if dh != 0.0:
        hsv = mcolors.rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        out = mcolors.hsv_to_rgb(hsv)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class Member:
    name: str
    image: np.ndarray  # f32, the view the model actually sees
    realign: Callable[[np.ndarray], np.ndarray]  # logits -> original grid


def build_members(
    img: np.ndarray, cfg: ExportConfig, rng: np.random.Generator
) -> list[Member]:
    """The TTA views of one image plus their realignment maps."""
    h, w = img.shape[:2]
    members = [Member("original", img.copy(), lambda lg: lg)]
    if cfg.flip:
        members.append(Member("flip", hflip(img), unflip_logits))
    for s in cfg.scales:
        sh, sw = max(1, round(h * s)), max(1, round(w * s))
        members.append(
            Member(
                f"scale_{s:g}",
                resize_image(img, sh, sw),
                lambda lg, oh=h, ow=w: resize_logits(lg, oh, ow),
            )
        )
    if cfg.jitter:
        members.append(
            Member(
                "jitter",
                color_jitter(
                    img,
                    rng,
                    cfg.jitter_brightness,
                    cfg.jitter_contrast,
                    cfg.jitter_saturation,
                    cfg.jitter_hue,
                ),
                lambda lg: lg,
            )
        )
    return members
