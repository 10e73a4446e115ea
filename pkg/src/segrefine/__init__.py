"""Uncertainty-gated region retrieval and fusion for semantic segmentation.

An ensemble's disagreement maps drive region proposals; a memory bank of
confidently-labeled region crops supplies retrieved label evidence; a gate
decides which regions are worth fusing. Submodules: store (tensor/manifest
IO), synth (data generator), uncertainty, regions, retrieval, fusion,
gating, evaluation, pipeline, cli.
"""

from .evaluation import EvalReport, RegionRecord, evaluate, pearson, region_iou
from .fusion import FusionConfig, apply_fusion, fuse_region
from .gating import POLICIES, GateDecision, GateMetrics, gate, stratify_by_mi
from .pipeline import PipelineConfig, evaluate_run, run
from .regions import RegionProposal, extract_regions
from .retrieval import MemoryBank, build_bank, load_bank, query_hierarchical, save_bank
from .store import Manifest, SceneBundle, load_bundle, read_manifest, write_manifest
from .synth import SynthConfig, generate_dataset, generate_scene
from .uncertainty import (
    ensemble_mean,
    epkl,
    mutual_information,
    predictive_entropy,
    softmax_logits,
)

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "FusionConfig",
    "GateDecision",
    "GateMetrics",
    "Manifest",
    "MemoryBank",
    "POLICIES",
    "PipelineConfig",
    "RegionProposal",
    "RegionRecord",
    "SceneBundle",
    "SynthConfig",
    "apply_fusion",
    "build_bank",
    "ensemble_mean",
    "epkl",
    "evaluate",
    "evaluate_run",
    "extract_regions",
    "fuse_region",
    "gate",
    "generate_dataset",
    "generate_scene",
    "load_bank",
    "load_bundle",
    "mutual_information",
    "pearson",
    "predictive_entropy",
    "query_hierarchical",
    "read_manifest",
    "region_iou",
    "run",
    "save_bank",
    "softmax_logits",
    "stratify_by_mi",
    "write_manifest",
    "__version__",
]
