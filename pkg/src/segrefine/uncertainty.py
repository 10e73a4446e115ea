"""Ensemble probability maps and pixel-level uncertainty.

An ensemble of K per-member logit maps becomes K probability maps
(stabilized softmax), and the ensemble supports three uncertainty measures:

* predictive entropy of the mean member, H[p_bar] = -sum_c p_bar_c ln p_bar_c
* mutual information, MI = H[p_bar] - (1/K) sum_k H[p_k], the disagreement
  part of the predictive entropy
* expected pairwise KL divergence, the mean of KL(p_i || p_j) over all
  K(K-1) ordered member pairs

All logarithms are natural. Probabilities are clamped below at EPS before
every log so one-hot pixels stay finite.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-12

KINDS = ("entropy", "mutual_information", "epkl")


def softmax_logits(logits: np.ndarray) -> list[np.ndarray]:
    """Per-pixel softmax along the class axis for each ensemble member.

    ``logits`` is f32 [K, C, H, W]; returns K maps of shape [C, H, W].
    Stabilized by max-subtraction, so shifting all logits at a pixel by a
    constant leaves the output unchanged.
    """
    if logits.ndim != 4:
        raise ValueError(f"expected [K, C, H, W] logits, got shape {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted, dtype=np.float64)
    probs = e / e.sum(axis=1, keepdims=True)
    return [probs[k].astype(np.float32) for k in range(probs.shape[0])]


def _check_members(members: list[np.ndarray]) -> None:
    if len(members) < 2:
        raise ValueError(f"ensemble needs K >= 2 members, got {len(members)}")
    shape = members[0].shape
    for i, m in enumerate(members):
        if m.shape != shape:
            raise ValueError(f"member {i} shape {m.shape} != member 0 shape {shape}")


def ensemble_mean(members: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of K probability maps [C, H, W]."""
    _check_members(members)
    return np.mean(np.stack(members), axis=0, dtype=np.float64).astype(np.float32)


def _entropy(probs: np.ndarray) -> np.ndarray:
    # probs [C, H, W] -> [H, W]; p * ln(clamp(p)) is 0 at p = 0
    p = probs.astype(np.float64)
    return -(p * np.log(np.maximum(p, EPS))).sum(axis=0)


def predictive_entropy(mean_probs: np.ndarray) -> np.ndarray:
    """Entropy of the mean member at every pixel, f32 [H, W], in nats."""
    return _entropy(mean_probs).astype(np.float32)


def mutual_information(members: list[np.ndarray]) -> np.ndarray:
    """Entropy of the mean minus mean member entropy, clamped below at 0."""
    _check_members(members)
    mean_probs = np.mean(np.stack(members, dtype=np.float64), axis=0)
    mi = _entropy(mean_probs) - np.mean([_entropy(m) for m in members], axis=0)
    return np.maximum(mi, 0.0).astype(np.float32)


def epkl(members: list[np.ndarray]) -> np.ndarray:
    """Mean KL(p_i || p_j) over all ordered member pairs i != j."""
    _check_members(members)
    k = len(members)
    logs = [np.log(np.maximum(m.astype(np.float64), EPS)) for m in members]
    ps = [m.astype(np.float64) for m in members]
    total = np.zeros(members[0].shape[1:], dtype=np.float64)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            total += (ps[i] * (logs[i] - logs[j])).sum(axis=0)
    return (total / (k * (k - 1))).astype(np.float32)


def compute_map(members: list[np.ndarray], kind: str) -> np.ndarray:
    """Dispatch to one of the three uncertainty measures by name."""
    if kind == "entropy":
        return predictive_entropy(ensemble_mean(members))
    if kind == "mutual_information":
        return mutual_information(members)
    if kind == "epkl":
        return epkl(members)
    raise ValueError(f"unknown uncertainty kind {kind!r}; expected one of {KINDS}")
