"""Export configuration and the package error type."""

from dataclasses import dataclass, field
from pathlib import Path


class ExportError(RuntimeError):
    """Any failure the exporter can attribute to inputs, models, or config."""


@dataclass
class ExportConfig:
    """Everything one export run needs.

    The ensemble layout is fixed by the augmentation toggles: member 0 is
    always the unaugmented image, then the flip member, then one member per
    scale, then the color-jitter member. K = 1 + flip + len(scales) + jitter,
    which is 5 with the defaults.
    """

    images: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    out_dir: str = "export"
    seg_model: str = "toy"  # "toy" or a hub id for a semantic-seg checkpoint
    feat_model: str = "toy"  # "toy" or a hub id for a ViT backbone
    class_count: int = 19
    void_label: int = 255
    patch_size: int = 8  # toy featurizer grid; hub backbones use their own
    embed_dim: int = 32  # toy featurizer width
    flip: bool = True
    scales: tuple[float, ...] = (0.9, 1.1)
    jitter: bool = True
    jitter_brightness: float = 0.1
    jitter_contrast: float = 0.1
    jitter_saturation: float = 0.05
    jitter_hue: float = 0.02
    corrupt: bool = True  # motion-blur the eval-split images before inference
    severity: float = 0.6
    kernel_max_len: int = 15  # blur extent in pixels at severity 1.0
    kernel_angle: float = 0.0  # degrees, 0 = horizontal streak
    bank_count: int = 0  # first N images form the bank split, rest eval
    seed: int = 42

    def ensemble_size(self) -> int:
        return 1 + int(self.flip) + len(self.scales) + int(self.jitter)

    def scene_ids(self) -> list[str]:
        return [Path(p).stem for p in self.images]

    def problems(self) -> list[str]:
        out = []
        if not self.images:
            out.append("images must list at least one input")
        if len(self.labels) != len(self.images):
            out.append(
                f"labels has {len(self.labels)} entries for {len(self.images)} images"
            )
        ids = self.scene_ids()
        dupes = sorted({sid for sid in ids if ids.count(sid) > 1})
        if dupes:
            out.append(f"image stems collide as scene ids: {dupes}")
        if self.class_count < 2:
            out.append(f"class_count must be >= 2, got {self.class_count}")
        if not 0 <= self.void_label <= 255:
            out.append(f"void_label must be in [0, 255], got {self.void_label}")
        if self.void_label < self.class_count:
            out.append(
                f"void_label {self.void_label} clashes with class range "
                f"[0, {self.class_count})"
            )
        if self.patch_size < 1:
            out.append(f"patch_size must be >= 1, got {self.patch_size}")
        if self.embed_dim < 1:
            out.append(f"embed_dim must be >= 1, got {self.embed_dim}")
        if any(s <= 0 for s in self.scales):
            out.append(f"scales must be positive, got {self.scales}")
        if self.ensemble_size() < 2:
            out.append("at least one augmentation must be enabled (ensemble needs K >= 2)")
        for name in ("jitter_brightness", "jitter_contrast", "jitter_saturation"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                out.append(f"{name} must be in [0, 1), got {v}")
        if not 0.0 <= self.jitter_hue <= 0.5:
            out.append(f"jitter_hue must be in [0, 0.5], got {self.jitter_hue}")
        if not 0.0 <= self.severity <= 1.0:
            out.append(f"severity must be in [0, 1], got {self.severity}")
        if self.kernel_max_len < 1:
            out.append(f"kernel_max_len must be >= 1, got {self.kernel_max_len}")
        if not 0 <= self.bank_count <= len(self.images):
            out.append(
                f"bank_count {self.bank_count} out of range for "
                f"{len(self.images)} images"
            )
        if not 0 <= self.seed < 2**64:
            out.append(f"seed must fit in u64, got {self.seed}")
        return out

    def validate(self) -> None:
        probs = self.problems()
        if probs:
            raise ExportError("invalid export config: " + "; ".join(probs))
