"""Bit-exact tensor and manifest I/O.

Tensor files are NPY v1.0 with dtypes restricted to ``<f4``, ``<i4`` and
``|u1``, always C-order, little-endian. The writer produces canonical bytes
(64-byte aligned header, space padded, newline terminated) so identical
tensors serialize identically. The manifest is a UTF-8 JSON file naming the
per-scene tensor files; schema in the README.

Everything here is eager about validation: malformed input raises a typed
error, never yields a partial result.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"
HEADER_ALIGN = 64
VOID_LABEL = 255

# allowed descr strings and their numpy dtypes
DTYPES = {
    "<f4": np.dtype("<f4"),
    "<i4": np.dtype("<i4"),
    "|u1": np.dtype("|u1"),
}


class StoreError(Exception):
    """Base class for storage failures."""


class FormatError(StoreError):
    """File is not a well-formed tensor/manifest (bad magic, header, schema)."""


class CorruptionError(StoreError):
    """Structurally valid header but payload length does not match the shape."""


class ValidationError(StoreError):
    """Content violates a domain invariant (non-finite floats, bad labels...)."""


def _descr_for(arr: np.ndarray) -> str:
    for descr, dt in DTYPES.items():
        if arr.dtype == dt:
            return descr
    raise ValidationError(f"unsupported dtype {arr.dtype}; expected one of {list(DTYPES)}")


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    """Write ``arr`` as a canonical NPY v1.0 file. Deterministic bytes."""
    descr = _descr_for(arr)
    arr = np.ascontiguousarray(arr)
    header_dict = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(arr.shape),
    )
    unpadded = len(MAGIC) + len(VERSION) + 2 + len(header_dict) + 1
    pad = (-unpadded) % HEADER_ALIGN
    header = header_dict + " " * pad + "\n"
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(VERSION)
            f.write(struct.pack("<H", len(header)))
            f.write(header.encode("ascii"))
            f.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise StoreError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an NPY v1.0 tensor written by :func:`write_tensor` (or numpy).

    Raises FormatError for malformed magic/header, CorruptionError when the
    payload length disagrees with the declared shape, and ValidationError for
    non-finite float payloads.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StoreError(f"cannot read tensor from {path}: {exc}") from exc

    if len(raw) < 10 or raw[:6] != MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    if raw[6:8] != VERSION:
        raise FormatError(f"{path}: unsupported NPY version {raw[6]}.{raw[7]}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + header_len:
        raise FormatError(f"{path}: truncated header")
    header = raw[10 : 10 + header_len]

    try:
        meta = ast.literal_eval(header.decode("ascii"))
    except (SyntaxError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: header must define descr/fortran_order/shape")
    descr = meta["descr"]
    if descr not in DTYPES:
        raise FormatError(f"{path}: unsupported descr {descr!r}")
    if meta["fortran_order"] is not False:
        raise FormatError(f"{path}: fortran_order must be False")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(n, int) and n >= 0 for n in shape
    ):
        raise FormatError(f"{path}: shape must be a tuple of non-negative ints")

    dtype = DTYPES[descr]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[10 + header_len :]
    if len(payload) != count * dtype.itemsize:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if dtype == DTYPES["<f4"] and arr.size and not np.isfinite(arr).all():
        raise ValidationError(f"{path}: float payload contains NaN/Inf")
    return arr


# --- manifests ---------------------------------------------------------------

MANIFEST_VERSION = "1"
TENSOR_KEYS = ("ensemble_logits", "patch_embeddings", "global_feature", "labels")


@dataclass
class SceneFiles:
    """Relative tensor paths for one scene."""

    scene_id: str
    ensemble_logits: str
    patch_embeddings: str
    global_feature: str
    labels: str

    def path_for(self, key: str) -> str:
        return getattr(self, key)


@dataclass
class Manifest:
    version: str
    class_count: int
    void_label: int
    patch_size: int
    scenes: list[SceneFiles]
    bank_split: list[str] = field(default_factory=list)
    eval_split: list[str] = field(default_factory=list)
    root: Path = Path(".")

    def scene_ids(self) -> list[str]:
        return [s.scene_id for s in self.scenes]

    def scene(self, scene_id: str) -> SceneFiles:
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise ValidationError(f"unknown scene_id {scene_id!r}")

    def to_dict(self) -> dict:
        d = {
            "version": self.version,
            "class_count": self.class_count,
            "void_label": self.void_label,
            "patch_size": self.patch_size,
            "scenes": [
                {
                    "scene_id": s.scene_id,
                    "ensemble_logits": s.ensemble_logits,
                    "patch_embeddings": s.patch_embeddings,
                    "global_feature": s.global_feature,
                    "labels": s.labels,
                }
                for s in self.scenes
            ],
        }
        if self.bank_split or self.eval_split:
            d["splits"] = {"bank": list(self.bank_split), "eval": list(self.eval_split)}
        return d


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")


def read_manifest(path: str | Path) -> Manifest:
    """Parse and structurally validate a manifest; checks referenced files exist.

    Deep validation of each scene's tensors happens in :func:`load_bundle`.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StoreError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc

    problems: list[str] = []
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    if not isinstance(raw.get("version"), str):
        problems.append("version must be a string")
    class_count = raw.get("class_count")
    if not isinstance(class_count, int) or class_count < 2:
        problems.append("class_count must be an int >= 2")
    void_label = raw.get("void_label")
    if not isinstance(void_label, int):
        problems.append("void_label must be an int")
    patch_size = raw.get("patch_size")
    if not isinstance(patch_size, int) or patch_size < 1:
        problems.append("patch_size must be an int >= 1")
    scenes_raw = raw.get("scenes")
    if not isinstance(scenes_raw, list) or not scenes_raw:
        problems.append("scenes must be a non-empty list")
        scenes_raw = []

    root = path.parent
    scenes: list[SceneFiles] = []
    seen: set[str] = set()
    for i, entry in enumerate(scenes_raw):
        if not isinstance(entry, dict) or not isinstance(entry.get("scene_id"), str):
            problems.append(f"scenes[{i}]: missing scene_id")
            continue
        sid = entry["scene_id"]
        if sid in seen:
            problems.append(f"scenes[{i}]: duplicate scene_id {sid!r}")
        seen.add(sid)
        rels = {}
        for key in TENSOR_KEYS:
            rel = entry.get(key)
            if not isinstance(rel, str):
                problems.append(f"scenes[{i}] ({sid}): missing {key} path")
                rel = ""
            elif not (root / rel).is_file():
                problems.append(f"scenes[{i}] ({sid}): {key} file {rel!r} does not exist")
            rels[key] = rel
        scenes.append(SceneFiles(scene_id=sid, **rels))

    splits = raw.get("splits", {})
    bank_split = list(splits.get("bank", [])) if isinstance(splits, dict) else []
    eval_split = list(splits.get("eval", [])) if isinstance(splits, dict) else []
    if bank_split or eval_split:
        ids = seen
        overlap = set(bank_split) & set(eval_split)
        if overlap:
            problems.append(f"splits overlap: {sorted(overlap)}")
        unknown = (set(bank_split) | set(eval_split)) - ids
        if unknown:
            problems.append(f"splits reference unknown scenes: {sorted(unknown)}")

    if problems:
        raise ValidationError(f"{path}: " + "; ".join(problems))
    return Manifest(
        version=raw["version"],
        class_count=class_count,
        void_label=void_label,
        patch_size=patch_size,
        scenes=scenes,
        bank_split=bank_split,
        eval_split=eval_split,
        root=root,
    )


# --- scene bundles -----------------------------------------------------------


@dataclass
class SceneBundle:
    """All per-scene inputs the engine consumes."""

    scene_id: str
    ensemble_logits: np.ndarray  # f32 [K, C, H, W]
    patch_embeddings: np.ndarray  # f32 [D, Hp, Wp]
    global_feature: np.ndarray  # f32 [D]
    labels: np.ndarray  # i32 [H, W], void = 255

    @property
    def ensemble_size(self) -> int:
        return self.ensemble_logits.shape[0]

    @property
    def class_count(self) -> int:
        return self.ensemble_logits.shape[1]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.ensemble_logits.shape[2], self.ensemble_logits.shape[3]


def validate_bundle(
    bundle: SceneBundle, class_count: int, void_label: int, patch_size: int
) -> None:
    """Check every SceneBundle invariant; raises ValidationError listing all faults."""
    problems: list[str] = []
    logits = bundle.ensemble_logits
    if logits.ndim != 4:
        problems.append(f"ensemble_logits must be [K,C,H,W], got shape {logits.shape}")
    else:
        k, c, h, w = logits.shape
        if k < 2:
            problems.append(f"ensemble size K={k} but K >= 2 required")
        if c < 2:
            problems.append(f"class axis C={c} but C >= 2 required")
        if c != class_count:
            problems.append(f"logits have C={c}, manifest says class_count={class_count}")
        if bundle.labels.ndim != 2 or bundle.labels.shape != (h, w):
            problems.append(
                f"labels shape {bundle.labels.shape} != image shape {(h, w)}"
            )
        emb = bundle.patch_embeddings
        if emb.ndim != 3:
            problems.append(f"patch_embeddings must be [D,Hp,Wp], got {emb.shape}")
        else:
            d, hp, wp = emb.shape
            if hp * wp < 1:
                problems.append("patch grid must contain at least one patch")
            if hp != -(-h // patch_size) or wp != -(-w // patch_size):
                problems.append(
                    f"patch grid {(hp, wp)} inconsistent with image {(h, w)} "
                    f"at patch_size {patch_size}"
                )
            if bundle.global_feature.shape != (d,):
                problems.append(
                    f"global_feature shape {bundle.global_feature.shape} != ({d},)"
                )
    if bundle.labels.size:
        vals = np.unique(bundle.labels)
        bad = vals[(vals != void_label) & ((vals < 0) | (vals >= class_count))]
        if bad.size:
            problems.append(f"labels contain invalid values {bad.tolist()}")
    if problems:
        raise ValidationError(f"scene {bundle.scene_id!r}: " + "; ".join(problems))


def load_bundle(manifest: Manifest, scene_id: str) -> SceneBundle:
    """Load one scene's tensors and validate every invariant eagerly."""
    files = manifest.scene(scene_id)
    arrays = {key: read_tensor(manifest.root / files.path_for(key)) for key in TENSOR_KEYS}
    expect = {
        "ensemble_logits": DTYPES["<f4"],
        "patch_embeddings": DTYPES["<f4"],
        "global_feature": DTYPES["<f4"],
        "labels": DTYPES["<i4"],
    }
    for key, dt in expect.items():
        if arrays[key].dtype != dt:
            raise ValidationError(
                f"scene {scene_id!r}: {key} has dtype {arrays[key].dtype}, expected {dt}"
            )
    bundle = SceneBundle(scene_id=scene_id, **arrays)
    validate_bundle(bundle, manifest.class_count, manifest.void_label, manifest.patch_size)
    return bundle
