"""Blending retrieved label crops into base probabilities.

Retrieved ground-truth label crops become (optionally smoothed) one-hot
probability crops, are resized to the query bbox, combined with
similarity-softmax weights, and blended into the base probabilities with a
trust factor that scales with the best match's similarity. Pixels outside
every fused bbox are left bit-identical to the base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regions import RegionProposal
from .retrieval import RetrievalMatch
from .store import ValidationError


@dataclass
class FusionConfig:
    lambda_max: float = 0.5  # upper bound on the blend weight alpha
    temperature: float = 0.1  # softmax temperature over match similarities
    label_smoothing: float = 0.0

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.lambda_max <= 1.0:
            out.append(f"lambda_max {self.lambda_max} outside [0, 1]")
        if self.temperature <= 0.0:
            out.append(f"temperature {self.temperature} must be > 0")
        if not 0.0 <= self.label_smoothing < 0.5:
            out.append(f"label_smoothing {self.label_smoothing} outside [0, 0.5)")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValidationError("invalid fusion config: " + "; ".join(problems))


def label_to_prob(
    label_crop: np.ndarray, class_count: int, smoothing: float = 0.0, void_label: int = 255
) -> np.ndarray:
    """One-hot (with optional smoothing) probability crop from labels.

    The true class gets 1 - smoothing, every other class smoothing/(C-1).
    Void pixels carry no information and get the uniform vector 1/C.
    """
    h, w = label_crop.shape
    probs = np.full((class_count, h, w), smoothing / (class_count - 1), dtype=np.float32)
    void = label_crop == void_label
    safe = np.where(void, 0, label_crop)
    cols = np.arange(h * w)
    flat = probs.reshape(class_count, -1)
    flat[safe.reshape(-1), cols] = 1.0 - smoothing
    probs = flat.reshape(class_count, h, w)
    probs[:, void] = 1.0 / class_count
    return probs


def resize_nearest(crop: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of [C, h, w] to [C, h', w'].

    Source index per axis is floor((i + 0.5) * src / dst), clamped.
    """
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError(f"target size {target} must be >= 1 per axis")
    _, h, w = crop.shape
    rows = np.minimum((((np.arange(th) + 0.5) * h) / th).astype(np.int64), h - 1)
    cols = np.minimum((((np.arange(tw) + 0.5) * w) / tw).astype(np.int64), w - 1)
    return crop[:, rows[:, None], cols[None, :]]


def fuse_region(
    base_crop: np.ndarray,
    prob_crops: list[np.ndarray],
    similarities: list[float],
    cfg: FusionConfig,
) -> np.ndarray:
    """Similarity-weighted blend of retrieved prob crops into a base crop.

    With s_i = max(0, similarity_i): inner weights are softmax(s / tau), the
    retrieved map is their weighted sum, and the output is
    (1 - alpha) * base + alpha * retrieved with alpha = lambda_max * max(s).
    Renormalized per pixel to guard rounding. Negative similarities get no
    weight; anti-correlated matches must not steer the blend.
    """
    if not prob_crops:
        raise ValueError("fuse_region requires at least one match (gate must prevent)")
    if len(prob_crops) != len(similarities):
        raise ValueError("one similarity per prob crop required")
    for crop in prob_crops:
        if crop.shape != base_crop.shape:
            raise ValueError(
                f"prob crop shape {crop.shape} != base crop shape {base_crop.shape}"
            )
    s = np.maximum(np.asarray(similarities, dtype=np.float64), 0.0)
    alpha = cfg.lambda_max * float(s.max())
    if alpha == 0.0:
        # nothing blended in; keep the base bit-exact
        return base_crop.copy()
    logits = s / cfg.temperature
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()

    retrieved = np.zeros(base_crop.shape, dtype=np.float64)
    for w_i, crop in zip(weights, prob_crops):
        retrieved += w_i * crop.astype(np.float64)
    fused = (1.0 - alpha) * base_crop.astype(np.float64) + alpha * retrieved
    fused /= fused.sum(axis=0, keepdims=True)
    return fused.astype(np.float32)


def apply_fusion(
    base: np.ndarray,
    decisions: list[tuple[RegionProposal, list[RetrievalMatch]]],
    cfg: FusionConfig,
    class_count: int,
    void_label: int = 255,
) -> np.ndarray:
    """Fuse every gated region into a copy of the base probability map.

    Regions are processed in descending order of their top-match similarity
    (ties by region_id), each reading the current, possibly already-fused
    probabilities, so overlapping bboxes compose sequentially. Regions with
    no matches are skipped. Pixels outside all bboxes stay bit-identical.
    """
    out = base.copy()
    order = sorted(
        (d for d in decisions if d[1]),
        key=lambda d: (-max(m.region_similarity for m in d[1]), d[0].region_id),
    )
    for region, matches in order:
        sy, sx = region.bbox_slices
        target = (sy.stop - sy.start, sx.stop - sx.start)
        crops = [
            resize_nearest(
                label_to_prob(m.entry.label_crop, class_count, cfg.label_smoothing, void_label),
                target,
            )
            for m in matches
        ]
        sims = [m.region_similarity for m in matches]
        out[:, sy, sx] = fuse_region(out[:, sy, sx], crops, sims, cfg)
    return out
