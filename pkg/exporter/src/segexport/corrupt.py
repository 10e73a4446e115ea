"""Motion-blur corruption for evaluation images.

The reference corruption protocol for this kind of benchmark does not pin a
specific blur kernel, so the streak length and angle are plain config here.
Severity scales the streak length; severity 0 is the identity and returns
the image unmodified.
"""

import numpy as np


def kernel_length(severity: float, max_len: int) -> int:
    """Odd streak length in pixels, 1 at severity 0, max_len-ish at 1."""
    if severity <= 0.0:
        return 1
    return 1 + 2 * round(severity * (max_len - 1) / 2)


def _shift_bilinear(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    # sample img at (y + dy, x + dx) with clamp-to-edge, [H, W, C]
    h, w = img.shape[:2]
    ys = np.arange(h, dtype=np.float64) + dy
    xs = np.arange(w, dtype=np.float64) + dx
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    wy = (ys - y0f)[:, None, None]
    wx = (xs - x0f)[None, :, None]
    y0 = np.clip(y0f, 0, h - 1).astype(np.intp)
    x0 = np.clip(x0f, 0, w - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.intp)
    p = img.astype(np.float64)
    top = (1.0 - wx) * p[y0[:, None], x0[None, :]] + wx * p[y0[:, None], x1[None, :]]
    bot = (1.0 - wx) * p[y1[:, None], x0[None, :]] + wx * p[y1[:, None], x1[None, :]]
    return (1.0 - wy) * top + wy * bot


def motion_blur(
    img: np.ndarray, severity: float, max_len: int = 15, angle: float = 0.0
) -> np.ndarray:
    """Average the image along a line of taps through each pixel.

    Taps sit at unit spacing along the angle direction, centered, so the
    kernel is symmetric and a left-right symmetric image stays symmetric
    under a horizontal streak. Edges clamp, which keeps constant images
    exactly constant.
    """
    length = kernel_length(severity, max_len)
    if length <= 1:
        return img.copy()
    theta = np.deg2rad(angle)
    cx, cy = np.cos(theta), np.sin(theta)
    acc = np.zeros(img.shape, dtype=np.float64)
    for t in np.arange(length, dtype=np.float64) - (length - 1) / 2.0:
        acc += _shift_bilinear(img, t * cy, t * cx)
    return (acc / length).astype(img.dtype)
