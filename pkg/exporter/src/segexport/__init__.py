"""Scene bundle exporter: TTA ensembles, patch features, labels, manifest."""

from .augment import (
    Member,
    build_members,
    color_jitter,
    hflip,
    resize_image,
    resize_logits,
    unflip_logits,
)
from .backends import (
    HubFeaturizer,
    HubSegmenter,
    ToyFeaturizer,
    ToySegmenter,
    feat_backend,
    seg_backend,
)
from .config import ExportConfig, ExportError
from .corrupt import kernel_length, motion_blur
from .export import export_dataset, export_scene, save_tensor
from .images import read_image, read_label
from .selftest import run_selftest, symmetric_image

__all__ = [
    "ExportConfig",
    "ExportError",
    "HubFeaturizer",
    "HubSegmenter",
    "Member",
    "ToyFeaturizer",
    "ToySegmenter",
    "build_members",
    "color_jitter",
    "export_dataset",
    "export_scene",
    "feat_backend",
    "hflip",
    "kernel_length",
    "motion_blur",
    "read_image",
    "read_label",
    "resize_image",
    "resize_logits",
    "run_selftest",
    "save_tensor",
    "seg_backend",
    "symmetric_image",
    "unflip_logits",
]

__version__ = "0.1.0"
