"""Region features, the memory bank, and hierarchical similarity queries.

A region's feature is a single D-vector: the region's bounding box is mapped
onto the patch-embedding grid, treated as one RoI-Align bin, sampled
bilinearly at a 2x2 sub-grid, averaged and L2-normalized. The bank keeps a
unit global feature per scene plus the most confident (lowest uncertainty)
region entries per scene, each with its ground-truth label crop. Queries run
in two stages: global cosine over scenes, then region cosine over the
entries of the surviving scenes. All features are unit vectors, so cosine is
a plain dot product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import regions as regions_mod
from . import store, uncertainty
from .store import CorruptionError, FormatError, SceneBundle, StoreError, ValidationError

BANK_VERSION = "1"
DEFAULT_TOP_IMAGES = 50
DEFAULT_TOP_REGIONS = 5
DEFAULT_KEEP_FRACTION = 0.25
NORM_TOL = 1e-5


@dataclass
class RegionFeature:
    region_id: str
    vector: np.ndarray  # f32 [D], unit norm

    def __post_init__(self):
        norm = float(np.linalg.norm(self.vector.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValidationError(
                f"region {self.region_id!r}: feature norm {norm} not within "
                f"{NORM_TOL} of 1"
            )


@dataclass
class BankEntry:
    scene_id: str
    region_id: str
    feature: RegionFeature
    bbox: tuple[int, int, int, int]
    label_crop: np.ndarray  # i32 [h, w]
    source_uncertainty: float


@dataclass
class MemoryBank:
    class_count: int
    embed_dim: int
    globals_: list[tuple[str, np.ndarray]]  # (scene_id, unit f32 [D]) per scene
    entries: list[BankEntry]  # grouped by scene, per-scene ascending uncertainty

    def scene_ids(self) -> list[str]:
        return [sid for sid, _ in self.globals_]

    def entries_for(self, scene_id: str) -> list[BankEntry]:
        return [e for e in self.entries if e.scene_id == scene_id]


@dataclass
class RetrievalMatch:
    entry: BankEntry
    region_similarity: float
    global_similarity: float


def normalize(vector: np.ndarray) -> np.ndarray:
    """Unit-normalize a vector; a zero-norm vector is an error."""
    v = vector.astype(np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return (v / norm).astype(np.float32)


def roi_align(
    patches: np.ndarray, bbox: tuple[int, int, int, int], patch_size: int
) -> np.ndarray:
    """Pool patch embeddings inside a pixel bbox into one unit D-vector.

    The inclusive pixel bbox spans the continuous interval
    [x0, x1 + 1) x [y0, y1 + 1); dividing by ``patch_size`` maps it onto the
    patch grid, whose node for patch j sits at coordinate j. The whole bbox
    is one bin, sampled at the 2x2 regular sub-grid (fractions 1/4 and 3/4
    of the bin extent), with sample coordinates clamped to the grid before
    bilinear interpolation. The 4 samples are averaged per channel and the
    result L2-normalized.
    """
    d, hp, wp = patches.shape
    x0, y0, x1, y1 = bbox
    if x1 < x0 or y1 < y0:
        raise ValidationError(f"degenerate bbox {bbox}")
    if x0 < 0 or y0 < 0 or x1 >= wp * patch_size or y1 >= hp * patch_size:
        raise ValidationError(f"bbox {bbox} outside patch grid {(hp, wp)} at size {patch_size}")

    xs = np.array([x0, x1 + 1.0]) / patch_size
    ys = np.array([y0, y1 + 1.0]) / patch_size
    acc = np.zeros(d, dtype=np.float64)
    for fy in (0.25, 0.75):
        for fx in (0.25, 0.75):
            u = xs[0] + fx * (xs[1] - xs[0])
            v = ys[0] + fy * (ys[1] - ys[0])
            acc += _bilinear(patches, v, u)
    return normalize(acc / 4.0)


def _bilinear(patches: np.ndarray, v: float, u: float) -> np.ndarray:
    """Sample [D, Hp, Wp] at continuous (v, u), nodes at integers, clamped."""
    _, hp, wp = patches.shape
    u = min(max(u, 0.0), wp - 1.0)
    v = min(max(v, 0.0), hp - 1.0)
    j0 = min(int(np.floor(u)), max(wp - 2, 0))
    i0 = min(int(np.floor(v)), max(hp - 2, 0))
    j1 = min(j0 + 1, wp - 1)
    i1 = min(i0 + 1, hp - 1)
    tu = u - j0
    tv = v - i0
    p = patches.astype(np.float64)
    return (
        p[:, i0, j0] * (1 - tv) * (1 - tu)
        + p[:, i0, j1] * (1 - tv) * tu
        + p[:, i1, j0] * tv * (1 - tu)
        + p[:, i1, j1] * tv * tu
    )


def build_bank(
    bank_scenes: list[SceneBundle],
    patch_size: int,
    class_count: int,
    uncertainty_kind: str = "mutual_information",
    keep_fraction: float = DEFAULT_KEEP_FRACTION,
    q: float = regions_mod.DEFAULT_PERCENTILE,
    min_area: int = regions_mod.DEFAULT_MIN_AREA,
    log=None,
) -> MemoryBank:
    """Build a memory bank from the bank-split scenes.

    Per scene: compute the configured uncertainty map, extract regions, and
    retain the max(1, floor(keep_fraction * n)) lowest-uncertainty regions
    with their RoI-Align features and ground-truth label crops. A scene with
    no regions still contributes its global feature.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction {keep_fraction} outside (0, 1]")
    globals_: list[tuple[str, np.ndarray]] = []
    entries: list[BankEntry] = []
    embed_dim = None
    for bundle in bank_scenes:
        embed_dim = bundle.patch_embeddings.shape[0]
        globals_.append((bundle.scene_id, normalize(bundle.global_feature)))
        members = uncertainty.softmax_logits(bundle.ensemble_logits)
        unc_map = uncertainty.compute_map(members, uncertainty_kind)
        found = regions_mod.extract_regions(unc_map, bundle.scene_id, q=q, min_area=min_area)
        if not found:
            if log is not None:
                log(f"scene {bundle.scene_id}: no regions, storing global feature only")
            continue
        keep = max(1, int(np.floor(keep_fraction * len(found))))
        retained = sorted(found, key=lambda r: (r.score, r.region_id))[:keep]
        for region in retained:
            feature = roi_align(bundle.patch_embeddings, region.bbox, patch_size)
            sy, sx = region.bbox_slices
            entries.append(
                BankEntry(
                    scene_id=bundle.scene_id,
                    region_id=region.region_id,
                    feature=RegionFeature(region.region_id, feature),
                    bbox=region.bbox,
                    label_crop=bundle.labels[sy, sx].astype(np.int32),
                    source_uncertainty=region.score,
                )
            )
    if embed_dim is None:
        raise ValueError("cannot build a bank from zero scenes")
    return MemoryBank(
        class_count=class_count, embed_dim=embed_dim, globals_=globals_, entries=entries
    )


# --- persistence -------------------------------------------------------------


def save_bank(bank: MemoryBank, bank_dir: str | Path) -> None:
    """Persist a bank as bank.json plus tensor files. Deterministic bytes."""
    bank_dir = Path(bank_dir)
    bank_dir.mkdir(parents=True, exist_ok=True)
    crops_dir = bank_dir / "crops"
    crops_dir.mkdir(exist_ok=True)
    for stale in crops_dir.glob("crop_*.npy"):
        stale.unlink()

    globals_arr = np.stack([g for _, g in bank.globals_]).astype(np.float32)
    store.write_tensor(bank_dir / "globals.npy", globals_arr)
    if bank.entries:
        features = np.stack([e.feature.vector for e in bank.entries]).astype(np.float32)
    else:
        features = np.zeros((0, bank.embed_dim), dtype=np.float32)
    store.write_tensor(bank_dir / "features.npy", features)
    for i, entry in enumerate(bank.entries):
        store.write_tensor(bank_dir / "crops" / f"crop_{i:05d}.npy", entry.label_crop)

    meta = {
        "version": BANK_VERSION,
        "class_count": bank.class_count,
        "embed_dim": bank.embed_dim,
        "scenes": [sid for sid, _ in bank.globals_],
        "entries": [
            {
                "scene_id": e.scene_id,
                "region_id": e.region_id,
                "bbox": list(e.bbox),
                "source_uncertainty": float(f"{e.source_uncertainty:.9g}"),
                "crop": f"crops/crop_{i:05d}.npy",
            }
            for i, e in enumerate(bank.entries)
        ],
    }
    text = json.dumps(meta, indent=2, sort_keys=True) + "\n"
    (bank_dir / "bank.json").write_text(text, encoding="utf-8")


def load_bank(bank_dir: str | Path) -> MemoryBank:
    """Load a bank saved by :func:`save_bank`; typed errors on any defect."""
    bank_dir = Path(bank_dir)
    meta_path = bank_dir / "bank.json"
    if not meta_path.is_file():
        raise FormatError(f"{bank_dir}: no bank.json (not a bank directory)")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: invalid JSON: {exc}") from exc
    if meta.get("version") != BANK_VERSION:
        raise FormatError(
            f"{meta_path}: version {meta.get('version')!r} != {BANK_VERSION!r}"
        )

    scene_ids = meta["scenes"]
    globals_arr = store.read_tensor(bank_dir / "globals.npy")
    if globals_arr.shape != (len(scene_ids), meta["embed_dim"]):
        raise CorruptionError(
            f"{bank_dir}: globals shape {globals_arr.shape} != "
            f"({len(scene_ids)}, {meta['embed_dim']})"
        )
    features = store.read_tensor(bank_dir / "features.npy")
    if features.shape != (len(meta["entries"]), meta["embed_dim"]):
        raise CorruptionError(
            f"{bank_dir}: features shape {features.shape} != "
            f"({len(meta['entries'])}, {meta['embed_dim']})"
        )

    known = set(scene_ids)
    entries = []
    for i, raw in enumerate(meta["entries"]):
        if raw["scene_id"] not in known:
            raise ValidationError(
                f"{bank_dir}: entry {raw['region_id']} references unknown scene "
                f"{raw['scene_id']!r}"
            )
        crop = store.read_tensor(bank_dir / raw["crop"])
        bbox = tuple(int(v) for v in raw["bbox"])
        h = bbox[3] - bbox[1] + 1
        w = bbox[2] - bbox[0] + 1
        if crop.shape != (h, w):
            raise CorruptionError(
                f"{bank_dir}: crop {raw['crop']} shape {crop.shape} != bbox extent {(h, w)}"
            )
        entries.append(
            BankEntry(
                scene_id=raw["scene_id"],
                region_id=raw["region_id"],
                feature=RegionFeature(raw["region_id"], features[i]),
                bbox=bbox,
                label_crop=crop,
                source_uncertainty=float(raw["source_uncertainty"]),
            )
        )
    globals_ = [(sid, globals_arr[i]) for i, sid in enumerate(scene_ids)]
    for sid, g in globals_:
        norm = float(np.linalg.norm(g.astype(np.float64)))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValidationError(f"{bank_dir}: global feature of {sid!r} has norm {norm}")
    return MemoryBank(
        class_count=int(meta["class_count"]),
        embed_dim=int(meta["embed_dim"]),
        globals_=globals_,
        entries=entries,
    )


# --- queries -----------------------------------------------------------------


def query_hierarchical(
    bank: MemoryBank,
    query_global: np.ndarray,
    query_region: RegionFeature,
    top_images: int = DEFAULT_TOP_IMAGES,
    top_regions: int = DEFAULT_TOP_REGIONS,
) -> list[RetrievalMatch]:
    """Two-stage cosine search: scenes by global feature, then their regions.

    Stage 1 keeps the ``top_images`` most similar scenes (ties broken by
    scene_id ascending); stage 2 ranks the surviving scenes' entries by
    region cosine, ties broken by (scene_id, region_id) ascending. Returns
    up to ``top_regions`` matches, best first; empty when no surviving scene
    has entries (callers treat that as a gate failure).
    """
    if not bank.globals_:
        raise ValidationError("memory bank has no scenes")
    qg = query_global.astype(np.float64)
    ranked_scenes = sorted(
        (
            (-float(np.dot(qg, g.astype(np.float64))), sid)
            for sid, g in bank.globals_
        ),
    )[: max(top_images, 0)]
    survivors = {sid: -neg for neg, sid in ranked_scenes}

    qr = query_region.vector.astype(np.float64)
    scored = []
    for entry in bank.entries:
        if entry.scene_id not in survivors:
            continue
        sim = float(np.dot(qr, entry.feature.vector.astype(np.float64)))
        scored.append((-sim, entry.scene_id, entry.region_id, entry))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    return [
        RetrievalMatch(
            entry=entry,
            region_similarity=-neg,
            global_similarity=survivors[entry.scene_id],
        )
        for neg, _sid, _rid, entry in scored[: max(top_regions, 0)]
    ]
