"""Hermetic sanity checks for the augmentation and realignment machinery.

Runs entirely in memory on procedural images with the toy backends, so it
can be executed anywhere to confirm the export math before pointing the
tool at real data. The central check: on a left-right symmetric image the
flip member's realigned logits must agree with the plain member, because
flipping a symmetric image is a no-op. Any indexing mistake in the flip or
its realignment breaks that equality immediately.
"""

import numpy as np

from .augment import build_members, color_jitter, hflip, resize_logits, unflip_logits
from .backends import ToySegmenter
from .config import ExportConfig
from .corrupt import motion_blur


def symmetric_image(h: int = 48, w: int = 64, seed: int = 5) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, size=(h, w, 3)).astype(np.float32)
    return ((a + a[:, ::-1]) / 2.0).astype(np.float32)


def run_selftest(tol: float = 1e-5, log=None) -> list[str]:
    """Run every check; returns a list of failure descriptions (empty = pass)."""
    failures = []

    def check(name: str, ok: bool, detail: str = ""):
        if log:
            log(f"{'PASS' if ok else 'FAIL'}  {name}" + (f" ({detail})" if detail else ""))
        if not ok:
            failures.append(name + (f": {detail}" if detail else ""))

    cfg = ExportConfig(images=["mem"], labels=["mem"], class_count=7)
    seg = ToySegmenter(cfg.class_count, seed=cfg.seed)
    img = symmetric_image()

    base = seg.logits(img)
    flipped = unflip_logits(seg.logits(hflip(img)))
    gap = float(np.abs(base - flipped).max())
    check("flip realignment on symmetric image", gap <= tol, f"max gap {gap:.2e}")

    blurred = motion_blur(img, 0.6, cfg.kernel_max_len, angle=0.0)
    base_b = seg.logits(blurred)
    flip_b = unflip_logits(seg.logits(hflip(blurred)))
    gap_b = float(np.abs(base_b - flip_b).max())
    check(
        "flip realignment survives horizontal blur",
        gap_b <= tol,
        f"max gap {gap_b:.2e}",
    )

    const = np.full((40, 56, 3), 0.37, dtype=np.float32)
    lg = seg.logits(const)
    down = resize_logits(lg, 36, 50)
    up = resize_logits(down, 40, 56)
    gap_c = float(np.abs(up - lg).max())
    check("scale realignment exact on constant image", gap_c <= tol, f"max gap {gap_c:.2e}")

    members = build_members(img, cfg, np.random.default_rng(1))
    shapes_ok = all(
        m.realign(seg.logits(m.image)).shape == (cfg.class_count, *img.shape[:2])
        for m in members
    )
    check(
        f"all {len(members)} members realign to the input grid",
        len(members) == cfg.ensemble_size() and shapes_ok,
    )

    untouched = motion_blur(img, 0.0, cfg.kernel_max_len, cfg.kernel_angle)
    check(
        "severity 0 leaves pixels untouched",
        untouched.tobytes() == img.tobytes(),
    )

    j1 = color_jitter(img, np.random.default_rng(9), 0.1, 0.1, 0.05, 0.02)
    j2 = color_jitter(img, np.random.default_rng(9), 0.1, 0.1, 0.05, 0.02)
    check("jitter is deterministic under a fixed stream", np.array_equal(j1, j2))

    return failures
