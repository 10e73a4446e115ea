"""Batch export of scene bundles plus the dataset manifest.

Output layout and file formats follow the engine's store contract: NPY v1.0
tensors (f32 for logits and features, i32 for labels) under
scenes/<scene_id>/, referenced by a manifest.json with class metadata and
bank/eval splits. The formats are emitted directly here; nothing from the
engine package is imported, so a loaded export is a genuine round trip
across implementations.
"""

import json
from pathlib import Path

import numpy as np

from .augment import build_members
from .backends import feat_backend, seg_backend
from .config import ExportConfig, ExportError
from .corrupt import motion_blur
from .images import read_image, read_label

MANIFEST_VERSION = "1"
TENSOR_NAMES = ("ensemble_logits", "patch_embeddings", "global_feature", "labels")


def save_tensor(path: Path, arr: np.ndarray) -> None:
    """Write one tensor as little-endian C-order NPY v1.0."""
    if arr.dtype == np.float32:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        if not np.isfinite(arr).all():
            raise ExportError(f"{path.name}: tensor contains NaN/Inf")
    elif arr.dtype == np.int32:
        arr = np.ascontiguousarray(arr, dtype="<i4")
    else:
        raise ExportError(f"{path.name}: unsupported dtype {arr.dtype}")
    np.save(path, arr)


def export_scene(
    cfg: ExportConfig,
    seg,
    feat,
    index: int,
    image_path: str,
    label_path: str,
    out_root: Path,
) -> dict:
    """Run one image through corruption, TTA, and features; write its files.

    Returns the manifest scene entry. Evaluation-split images are blurred
    before any inference, so logits and features both describe the corrupted
    view the engine will be asked to refine.
    """
    sid = Path(image_path).stem
    img = read_image(image_path)
    labels = read_label(label_path, cfg.class_count, cfg.void_label)
    if labels.shape != img.shape[:2]:
        raise ExportError(
            f"label map shape {labels.shape} != image shape {img.shape[:2]}"
        )

    if cfg.corrupt and index >= cfg.bank_count:
        img = motion_blur(img, cfg.severity, cfg.kernel_max_len, cfg.kernel_angle)

    rng = np.random.default_rng((cfg.seed, index))
    members = build_members(img, cfg, rng)
    stack = np.stack([m.realign(seg.logits(m.image)) for m in members])
    if stack.shape != (cfg.ensemble_size(), cfg.class_count, *img.shape[:2]):
        raise ExportError(f"ensemble stack came out as {stack.shape}")
    emb, glob = feat.features(img)

    scene_dir = out_root / "scenes" / sid
    scene_dir.mkdir(parents=True, exist_ok=True)
    save_tensor(scene_dir / "ensemble_logits.npy", stack.astype(np.float32))
    save_tensor(scene_dir / "patch_embeddings.npy", emb)
    save_tensor(scene_dir / "global_feature.npy", glob)
    save_tensor(scene_dir / "labels.npy", labels.astype(np.int32))
    rel = f"scenes/{sid}"
    return {
        "scene_id": sid,
        "ensemble_logits": f"{rel}/ensemble_logits.npy",
        "patch_embeddings": f"{rel}/patch_embeddings.npy",
        "global_feature": f"{rel}/global_feature.npy",
        "labels": f"{rel}/labels.npy",
    }


def export_dataset(cfg: ExportConfig, log=None) -> Path:
    """Export every configured image; returns the manifest path.

    Failures are collected per image and reported together; if anything
    failed, no manifest is written, so a partial export can never be
    mistaken for a dataset.
    """
    cfg.validate()
    seg = seg_backend(cfg)
    feat = feat_backend(cfg)
    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)

    scenes = []
    failures = []
    for index, (image_path, label_path) in enumerate(zip(cfg.images, cfg.labels)):
        try:
            scenes.append(
                export_scene(cfg, seg, feat, index, image_path, label_path, out_root)
            )
            if log:
                log(f"exported {scenes[-1]['scene_id']}")
        except ExportError as exc:
            failures.append(f"{image_path}: {exc}")
    if failures:
        raise ExportError(
            f"export failed for {len(failures)} of {len(cfg.images)} images, "
            "no manifest written: " + "; ".join(failures)
        )

    ids = [s["scene_id"] for s in scenes]
    manifest = {
        "version": MANIFEST_VERSION,
        "class_count": cfg.class_count,
        "void_label": cfg.void_label,
        "patch_size": int(feat.patch_size),
        "scenes": scenes,
        "splits": {"bank": ids[: cfg.bank_count], "eval": ids[cfg.bank_count :]},
    }
    path = out_root / "manifest.json"
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if log:
        log(
            f"wrote {len(ids)} scenes to {out_root} "
            f"(bank {cfg.bank_count}, eval {len(ids) - cfg.bank_count})"
        )
    return path
