"""Deterministic synthetic scenes for exercising the full pipeline.

Each scene is a stripe/rectangle class partition with three ingredients
layered on top, all driven by one SplitMix64 stream per scene:

* flip zones: the ensemble's consensus is blended toward a wrong class and
  members get extra jitter. Their patch embeddings stay clean (they reflect
  the true content), so retrieval can find and fix them.
* distractor zones: the consensus stays correct but members disagree, and
  the patch embeddings are corrupted. High uncertainty, high base IoU, poor
  matches: fusing them is useless or harmful.
* a global noise floor on every member.

Every random draw happens regardless of corruption_severity; severity only
scales amplitudes. That makes uncertainty monotone in severity for a fixed
seed and keeps severity sweeps on identical geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import store
from .store import Manifest, SceneBundle, SceneFiles, VOID_LABEL, ValidationError

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_PROTO_SALT = 0x5052_4F54_4F54_5950

# amplitude model; severity scales the zone terms and the member noise floor
_BASE_LOGIT_SCALE = 6.0
_MEMBER_SIGMA_FLOOR = 0.05
_MEMBER_SIGMA_SEV = 0.30
_PATCH_SIGMA = 0.03
_VOID_BORDER = 2


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix_scalar(value: int) -> int:
    with np.errstate(over="ignore"):
        return int(_mix(np.array([value & _MASK64], dtype=np.uint64))[0])


class SplitMix64:
    """Counter-based SplitMix64; blocks of outputs are produced vectorized."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
            out = _mix(np.uint64(self._state) + steps)
        self._state = (self._state + n * GOLDEN) & _MASK64
        return out

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) with 53-bit resolution."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """n ints uniform in [lo, hi] (tiny modulo bias, fine for synthesis)."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        span = np.uint64(hi - lo + 1)
        return (self.raw(n) % span).astype(np.int64) + lo

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller; consumes ceil(n/2)*2 uniforms."""
        pairs = (n + 1) // 2
        u1 = np.maximum(self.uniforms(pairs), 1e-300)
        u2 = self.uniforms(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n]

    def unit_rows(self, count: int, dim: int) -> np.ndarray:
        rows = self.normals(count * dim).reshape(count, dim)
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)


@dataclass
class SynthConfig:
    seed: int = 42
    scene_count: int = 32
    height: int = 96
    width: int = 96
    class_count: int = 19
    ensemble_size: int = 5
    embed_dim: int = 32
    patch_size: int = 8
    corruption_severity: float = 0.6
    bank_fraction: float = 0.5

    def problems(self) -> list[str]:
        out = []
        if not 0 <= self.seed <= _MASK64:
            out.append("seed must fit in 64 bits")
        if self.scene_count < 2:
            out.append(f"scene_count must be >= 2, got {self.scene_count}")
        if self.height < self.patch_size or self.width < self.patch_size:
            out.append(
                f"height/width ({self.height}x{self.width}) must be >= "
                f"patch_size {self.patch_size}"
            )
        if self.class_count < 2:
            out.append(f"class_count must be >= 2, got {self.class_count}")
        if self.ensemble_size < 2:
            out.append(f"ensemble_size must be >= 2, got {self.ensemble_size}")
        if self.embed_dim < 1:
            out.append(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.patch_size < 1:
            out.append(f"patch_size must be >= 1, got {self.patch_size}")
        if not 0.0 <= self.corruption_severity <= 1.0:
            out.append(
                f"corruption_severity must lie in [0, 1], got {self.corruption_severity}"
            )
        if not 0.0 < self.bank_fraction < 1.0:
            out.append(f"bank_fraction must lie in (0, 1), got {self.bank_fraction}")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValidationError("invalid synth config: " + "; ".join(problems))


def class_prototypes(cfg: SynthConfig) -> np.ndarray:
    """One fixed unit vector per class, shared by all scenes of a seed.

    When embed_dim allows it the vectors are orthonormalized (modified
    Gram-Schmidt over the random draws), so the cosine between two
    patch-average features measures the class-composition overlap of the
    underlying regions instead of accidental prototype collisions.
    """
    rng = SplitMix64(cfg.seed ^ _PROTO_SALT)
    rows = rng.unit_rows(cfg.class_count, cfg.embed_dim)
    if cfg.class_count > cfg.embed_dim:
        return rows
    for i in range(cfg.class_count):
        v = rows[i].copy()
        for j in range(i):
            v -= np.dot(rows[j], v) * rows[j]
        rows[i] = v / np.linalg.norm(v)
    return rows


def _paint_rects(rng: SplitMix64, count: int, h: int, w: int, lo: int, hi: int):
    """Draw count rects as (y0, x0, rh, rw) with sides in [lo, hi], clipped."""
    y0 = rng.integers(0, max(h - lo, 0), count)
    x0 = rng.integers(0, max(w - lo, 0), count)
    rh = rng.integers(lo, hi, count)
    rw = rng.integers(lo, hi, count)
    rects = []
    for i in range(count):
        rects.append(
            (
                int(y0[i]),
                int(x0[i]),
                int(min(rh[i], h - y0[i])),
                int(min(rw[i], w - x0[i])),
            )
        )
    return rects


def _zone_slices(rect):
    y0, x0, rh, rw = rect
    return slice(y0, y0 + rh), slice(x0, x0 + rw)


def generate_scene(cfg: SynthConfig, index: int) -> SceneBundle:
    """Build one scene; same (cfg, index) always yields bit-identical output."""
    if not 0 <= index < cfg.scene_count:
        raise ValueError(f"scene index {index} outside [0, {cfg.scene_count})")
    h, w = cfg.height, cfg.width
    cc, k, d, ps = cfg.class_count, cfg.ensemble_size, cfg.embed_dim, cfg.patch_size
    sev = float(cfg.corruption_severity)
    rng = SplitMix64(cfg.seed ^ _mix_scalar((index + 1) * GOLDEN))

    # label partition: horizontal stripes, then rectangles painted on top
    n_stripes = int(rng.integers(4, 6, 1)[0])
    cuts = np.sort(rng.integers(1, max(h - 1, 1), n_stripes - 1))
    # squared-uniform class draws skew mass toward low ids, so compositions
    # recur across scenes and the bank usually holds a counterpart
    stripe_classes = np.floor(cc * rng.uniforms(n_stripes) ** 2).astype(np.int64)
    content = np.zeros((h, w), dtype=np.int32)
    bounds = [0] + [int(c) for c in cuts] + [h]
    for s in range(n_stripes):
        content[bounds[s] : bounds[s + 1], :] = stripe_classes[s]
    n_lrects = int(rng.integers(4, 7, 1)[0])
    lrects = _paint_rects(rng, n_lrects, h, w, 12, 24)
    lclasses = np.floor(cc * rng.uniforms(n_lrects) ** 2).astype(np.int64)
    for rect, cls in zip(lrects, lclasses):
        sy, sx = _zone_slices(rect)
        content[sy, sx] = cls

    # flip zones: consensus blended toward a wrong class + member jitter.
    # Rects are snapped inside the stripe under their center where they fit,
    # so the corrupted area usually has a single true class and a correct
    # retrieval can repair it wholesale.
    n_flip = int(rng.integers(5, 7, 1)[0])
    flip_rects = _paint_rects(rng, n_flip, h, w, 11, 15)
    snapped = []
    for y0, x0, rh, rw in flip_rects:
        center = min(y0 + rh // 2, h - 1)
        s = next(i for i in range(n_stripes) if bounds[i] <= center < bounds[i + 1])
        if bounds[s + 1] - bounds[s] >= rh:
            y0 = min(max(y0, bounds[s]), bounds[s + 1] - rh)
        snapped.append((y0, x0, rh, rw))
    flip_rects = snapped
    flip_targets = rng.integers(0, cc - 1, n_flip)
    flip_u = rng.uniforms(n_flip)
    flip_u2 = rng.uniforms(n_flip)

    # distractor zones: correct consensus, noisy members, corrupted features
    n_dis = int(rng.integers(4, 6, 1)[0])
    dis_rects = _paint_rects(rng, n_dis, h, w, 11, 15)
    dis_v = rng.uniforms(n_dis)
    dis_v2 = rng.uniforms(n_dis)

    member_noise = rng.normals(k * cc * h * w).reshape(k, cc, h, w)
    hp = -(-h // ps)
    wp = -(-w // ps)
    patch_noise = rng.normals(d * hp * wp).reshape(d, hp, wp)

    # consensus class-probability target
    consensus = np.zeros((cc, h, w), dtype=np.float64)
    consensus[content, np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
    for i, rect in enumerate(flip_rects):
        sy, sx = _zone_slices(rect)
        g = min(0.95, sev * (0.85 + 0.3 * flip_u2[i]))
        consensus[:, sy, sx] *= 1.0 - g
        consensus[flip_targets[i], sy, sx] += g

    # per-pixel member-noise amplitude: global floor plus the hottest zone
    sigma = np.full((h, w), _MEMBER_SIGMA_FLOOR + _MEMBER_SIGMA_SEV * sev)
    zone = np.zeros((h, w))
    for i, rect in enumerate(flip_rects):
        sy, sx = _zone_slices(rect)
        np.maximum(zone[sy, sx], sev * (0.9 + 1.1 * flip_u[i]), out=zone[sy, sx])
    for i, rect in enumerate(dis_rects):
        sy, sx = _zone_slices(rect)
        np.maximum(zone[sy, sx], sev * (0.85 + 1.1 * dis_v[i]), out=zone[sy, sx])
    sigma += zone

    logits = _BASE_LOGIT_SCALE * consensus[None] + sigma[None, None] * member_noise
    ensemble_logits = logits.astype(np.float32)

    # embeddings reflect the true content; distractor zones corrupt them
    protos = class_prototypes(cfg)
    pixel_emb = protos[content].transpose(2, 0, 1)  # [D, H, W]
    pad_h = hp * ps - h
    pad_w = wp * ps - w
    if pad_h or pad_w:
        pixel_emb = np.pad(pixel_emb, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    patch_mean = pixel_emb.reshape(d, hp, ps, wp, ps).mean(axis=(2, 4))

    emb_sigma_px = np.zeros((h, w))
    for i, rect in enumerate(dis_rects):
        sy, sx = _zone_slices(rect)
        np.maximum(
            emb_sigma_px[sy, sx], sev * (0.2 + 0.55 * dis_v[i] + 0.3 * dis_v2[i]), out=emb_sigma_px[sy, sx]
        )
    if pad_h or pad_w:
        emb_sigma_px = np.pad(emb_sigma_px, ((0, pad_h), (0, pad_w)), mode="edge")
    patch_sigma = _PATCH_SIGMA + emb_sigma_px.reshape(hp, ps, wp, ps).max(axis=(1, 3))
    patch_embeddings = (patch_mean + patch_sigma[None] * patch_noise).astype(np.float32)
    global_feature = patch_embeddings.reshape(d, -1).mean(axis=1).astype(np.float32)

    labels = content.copy()
    b = _VOID_BORDER
    if h > 2 * b and w > 2 * b:
        labels[:b, :] = VOID_LABEL
        labels[-b:, :] = VOID_LABEL
        labels[:, :b] = VOID_LABEL
        labels[:, -b:] = VOID_LABEL

    return SceneBundle(
        scene_id=f"scene_{index:03d}",
        ensemble_logits=ensemble_logits,
        patch_embeddings=patch_embeddings,
        global_feature=global_feature,
        labels=labels.astype(np.int32),
    )


def split_ids(cfg: SynthConfig) -> tuple[list[str], list[str]]:
    """Bank/eval scene ids: first ceil(bank_fraction * n) scenes go to the bank."""
    ids = [f"scene_{i:03d}" for i in range(cfg.scene_count)]
    n_bank = math.ceil(cfg.bank_fraction * cfg.scene_count)
    return ids[:n_bank], ids[n_bank:]


def generate_dataset(cfg: SynthConfig, out_dir: str | Path) -> Manifest:
    """Write all scenes plus the manifest; first ceil(bank_fraction * n)
    scenes form the bank split, the rest the evaluation split."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes: list[SceneFiles] = []
    for index in range(cfg.scene_count):
        bundle = generate_scene(cfg, index)
        sid = bundle.scene_id
        scene_dir = out_dir / "scenes" / sid
        scene_dir.mkdir(parents=True, exist_ok=True)
        rel = f"scenes/{sid}"
        store.write_tensor(scene_dir / "ensemble_logits.npy", bundle.ensemble_logits)
        store.write_tensor(scene_dir / "patch_embeddings.npy", bundle.patch_embeddings)
        store.write_tensor(scene_dir / "global_feature.npy", bundle.global_feature)
        store.write_tensor(scene_dir / "labels.npy", bundle.labels)
        scenes.append(
            SceneFiles(
                scene_id=sid,
                ensemble_logits=f"{rel}/ensemble_logits.npy",
                patch_embeddings=f"{rel}/patch_embeddings.npy",
                global_feature=f"{rel}/global_feature.npy",
                labels=f"{rel}/labels.npy",
            )
        )
    bank_split, eval_split = split_ids(cfg)
    manifest = Manifest(
        version=store.MANIFEST_VERSION,
        class_count=cfg.class_count,
        void_label=VOID_LABEL,
        patch_size=cfg.patch_size,
        scenes=scenes,
        bank_split=bank_split,
        eval_split=eval_split,
        root=out_dir,
    )
    store.write_manifest(manifest, out_dir / "manifest.json")
    return manifest
