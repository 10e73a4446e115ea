"""End-to-end orchestration: scenes to gate decisions to fused tensors.

`run` processes the manifest's evaluation split against a built memory bank:
per scene it computes uncertainty maps, extracts regions, pools features and
retrieves matches for every region (the analysis tables need the
counterfactual numbers even for regions the gate skips), applies the gate
policy over the whole collected population, fuses the gated regions into
per-scene probability tensors, and persists one RegionRecord per region.
Everything is deterministic for a fixed config; scene-level parallelism only
reorders work, never output.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, fusion, gating, regions, retrieval, store, uncertainty
from .evaluation import RegionRecord
from .store import Manifest, SceneBundle, ValidationError


@dataclass
class PipelineConfig:
    """Every knob of the engine with its default, JSON round-trippable."""

    manifest: str = "data/manifest.json"
    bank_dir: str = "bank"
    out_dir: str = "out"
    uncertainty_kind: str = "mutual_information"
    percentile: float = regions.DEFAULT_PERCENTILE
    min_area: int = regions.DEFAULT_MIN_AREA
    top_images: int = retrieval.DEFAULT_TOP_IMAGES
    top_regions: int = retrieval.DEFAULT_TOP_REGIONS
    keep_fraction: float = retrieval.DEFAULT_KEEP_FRACTION
    lambda_max: float = 0.5
    temperature: float = 0.1
    label_smoothing: float = 0.0
    policy: str = "two_stage"
    gate_metric: str | None = None
    gate_fraction: float | None = None
    seed: int = 42
    jobs: int = 1

    def fusion_config(self) -> fusion.FusionConfig:
        return fusion.FusionConfig(
            lambda_max=self.lambda_max,
            temperature=self.temperature,
            label_smoothing=self.label_smoothing,
        )

    def problems(self) -> list[str]:
        out = []
        if self.uncertainty_kind not in uncertainty.KINDS:
            out.append(
                f"uncertainty_kind {self.uncertainty_kind!r} not in {list(uncertainty.KINDS)}"
            )
        if not 0.0 <= self.percentile < 100.0:
            out.append(f"percentile {self.percentile} outside [0, 100)")
        if self.min_area < 1:
            out.append(f"min_area {self.min_area} must be >= 1")
        if self.top_images < 1:
            out.append(f"top_images {self.top_images} must be >= 1")
        if self.top_regions < 1:
            out.append(f"top_regions {self.top_regions} must be >= 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            out.append(f"keep_fraction {self.keep_fraction} outside (0, 1]")
        if not 0.0 <= self.lambda_max <= 1.0:
            out.append(f"lambda_max {self.lambda_max} outside [0, 1]")
        if self.temperature <= 0.0:
            out.append(f"temperature {self.temperature} must be > 0")
        if not 0.0 <= self.label_smoothing < 0.5:
            out.append(f"label_smoothing {self.label_smoothing} outside [0, 0.5)")
        if self.policy not in gating.POLICIES:
            out.append(f"policy {self.policy!r} not in {list(gating.POLICIES)}")
        if self.policy == "topk_by":
            if not self.gate_metric:
                out.append("policy topk_by requires gate_metric")
            if self.gate_fraction is None or not 0.0 < self.gate_fraction <= 1.0:
                out.append("policy topk_by requires gate_fraction in (0, 1]")
        if self.jobs < 1:
            out.append(f"jobs {self.jobs} must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            out.append("seed must fit in 64 bits")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValidationError("invalid config: " + "; ".join(problems))


@dataclass
class SceneComputation:
    """Everything `run` derives from one evaluation scene."""

    bundle: SceneBundle
    mean_probs: np.ndarray  # f32 [C, H, W]
    base_pred: np.ndarray  # i64 [H, W]
    entropy_map: np.ndarray
    mi_map: np.ndarray
    epkl_map: np.ndarray
    proposals: list[regions.RegionProposal]
    metrics: list[gating.GateMetrics] = field(default_factory=list)
    features: dict[str, retrieval.RegionFeature] = field(default_factory=dict)
    query_global: np.ndarray | None = None


def compute_scene(bundle: SceneBundle, cfg: PipelineConfig, class_count: int) -> SceneComputation:
    """Uncertainty maps, region proposals, gate metrics and pooled features."""
    members = uncertainty.softmax_logits(bundle.ensemble_logits)
    mean_probs = uncertainty.ensemble_mean(members)
    entropy_map = uncertainty.predictive_entropy(mean_probs)
    mi_map = uncertainty.mutual_information(members)
    epkl_map = uncertainty.epkl(members)
    gate_map = {
        "entropy": entropy_map,
        "mutual_information": mi_map,
        "epkl": epkl_map,
    }[cfg.uncertainty_kind]
    base_pred = np.argmax(mean_probs, axis=0)
    proposals = regions.extract_regions(
        gate_map, bundle.scene_id, q=cfg.percentile, min_area=cfg.min_area
    )
    comp = SceneComputation(
        bundle=bundle,
        mean_probs=mean_probs,
        base_pred=base_pred,
        entropy_map=entropy_map,
        mi_map=mi_map,
        epkl_map=epkl_map,
        proposals=proposals,
    )
    comp.query_global = retrieval.normalize(bundle.global_feature)
    for prop in proposals:
        comp.metrics.append(
            gating.compute_metrics(
                prop,
                entropy_map,
                mi_map,
                epkl_map,
                mean_probs,
                bundle.scene_id,
                labels=bundle.labels,
                base_pred=base_pred,
                class_count=class_count,
                oracle_kind=cfg.uncertainty_kind,
            )
        )
        comp.features[prop.region_id] = retrieval.RegionFeature(
            prop.region_id,
            retrieval.roi_align(bundle.patch_embeddings, prop.bbox, _patch_size(bundle)),
        )
    return comp


def _patch_size(bundle: SceneBundle) -> int:
    h = bundle.image_shape[0]
    hp = bundle.patch_embeddings.shape[1]
    return -(-h // hp)


@dataclass
class RunResult:
    records: list[RegionRecord]
    decisions: dict[str, gating.GateDecision]
    fused_paths: dict[str, Path]


def _solo_fused_iou(
    comp: SceneComputation,
    prop: regions.RegionProposal,
    matches: list[retrieval.RetrievalMatch],
    cfg: PipelineConfig,
    class_count: int,
    void_label: int,
) -> float | None:
    """IoU after fusing just this region, against an untouched base."""
    if not matches:
        return None
    fused = fusion.apply_fusion(
        comp.mean_probs, [(prop, matches)], cfg.fusion_config(), class_count, void_label
    )
    sy, sx = prop.bbox_slices
    return evaluation.region_iou(
        np.argmax(fused[:, sy, sx], axis=0),
        comp.bundle.labels[sy, sx],
        class_count,
        void_label,
    )


def run(
    manifest: Manifest,
    bank: retrieval.MemoryBank,
    cfg: PipelineConfig,
    out_dir: str | Path,
) -> RunResult:
    """Gate, fuse and record the manifest's evaluation split."""
    cfg.validate()
    if not manifest.eval_split:
        raise ValidationError("manifest has no evaluation split to run on")
    out_dir = Path(out_dir)
    (out_dir / "fused").mkdir(parents=True, exist_ok=True)
    class_count = manifest.class_count
    void_label = manifest.void_label

    def load_and_compute(scene_id: str) -> SceneComputation:
        return compute_scene(store.load_bundle(manifest, scene_id), cfg, class_count)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            comps = list(pool.map(load_and_compute, manifest.eval_split))
    else:
        comps = [load_and_compute(sid) for sid in manifest.eval_split]

    by_scene = {c.bundle.scene_id: c for c in comps}
    population: list[gating.GateMetrics] = []
    owner: dict[str, tuple[SceneComputation, regions.RegionProposal]] = {}
    for comp in comps:
        for prop, metric in zip(comp.proposals, comp.metrics):
            population.append(metric)
            owner[prop.region_id] = (comp, prop)

    # retrieval runs once for every region: gate policies consume it through
    # the cache, and the counterfactual columns need it even for skipped ones
    match_cache: dict[str, list[retrieval.RetrievalMatch]] = {}
    for metric in population:
        comp, prop = owner[metric.region_id]
        match_cache[metric.region_id] = retrieval.query_hierarchical(
            bank,
            comp.query_global,
            comp.features[prop.region_id],
            top_images=cfg.top_images,
            top_regions=cfg.top_regions,
        )
        if match_cache[metric.region_id]:
            metric.best_similarity = match_cache[metric.region_id][0].region_similarity

    decisions = gating.gate(
        cfg.policy,
        population,
        match_cache.__getitem__,
        metric=cfg.gate_metric,
        fraction=cfg.gate_fraction,
    )
    by_region = {d.region_id: d for d in decisions}

    fused_paths: dict[str, Path] = {}
    fused_tensors: dict[str, np.ndarray] = {}
    for comp in comps:
        scene_id = comp.bundle.scene_id
        gated_here = [
            (prop, match_cache[prop.region_id])
            for prop in comp.proposals
            if by_region[prop.region_id].passed
        ]
        fused_tensors[scene_id] = fusion.apply_fusion(
            comp.mean_probs, gated_here, cfg.fusion_config(), class_count, void_label
        )
        path = out_dir / "fused" / f"{scene_id}.npy"
        store.write_tensor(path, fused_tensors[scene_id])
        fused_paths[scene_id] = path

    records: list[RegionRecord] = []
    for metric in population:
        comp, prop = owner[metric.region_id]
        decision = by_region[metric.region_id]
        sy, sx = prop.bbox_slices
        if decision.passed:
            fused_iou = evaluation.region_iou(
                np.argmax(fused_tensors[comp.bundle.scene_id][:, sy, sx], axis=0),
                comp.bundle.labels[sy, sx],
                class_count,
                void_label,
            )
        else:
            fused_iou = metric.base_iou
        records.append(
            RegionRecord(
                region_id=metric.region_id,
                scene_id=metric.scene_id,
                area=prop.area,
                base_iou=metric.base_iou,
                fused_iou=fused_iou,
                gated=decision.passed,
                solo_delta_iou=_delta_or_none(
                    _solo_fused_iou(
                        comp, prop, match_cache[metric.region_id], cfg, class_count, void_label
                    ),
                    metric.base_iou,
                ),
                best_similarity=metric.best_similarity,
                mean_mi=metric.mean_mi,
                mean_entropy=metric.mean_entropy,
                mean_epkl=metric.mean_epkl,
                max_prob=metric.max_prob,
                margin=metric.margin,
            )
        )

    _write_records(records, cfg, out_dir / "records.json")
    return RunResult(records=records, decisions=by_region, fused_paths=fused_paths)


def _delta_or_none(fused_iou: float | None, base_iou: float) -> float | None:
    if fused_iou is None:
        return None
    return fused_iou - base_iou


def _g9(x: float | None) -> float | None:
    if x is None:
        return None
    return float(f"{x:.9g}")


def _write_records(records: list[RegionRecord], cfg: PipelineConfig, path: Path) -> None:
    payload = {
        "policy": cfg.policy,
        "records": [
            {
                "region_id": r.region_id,
                "scene_id": r.scene_id,
                "area": r.area,
                "base_iou": _g9(r.base_iou),
                "fused_iou": _g9(r.fused_iou),
                "solo_delta_iou": _g9(r.solo_delta_iou),
                "gated": r.gated,
                "best_similarity": _g9(r.best_similarity),
                "mean_mi": _g9(r.mean_mi),
                "mean_entropy": _g9(r.mean_entropy),
                "mean_epkl": _g9(r.mean_epkl),
                "max_prob": _g9(r.max_prob),
                "margin": _g9(r.margin),
            }
            for r in records
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_records(path: str | Path) -> tuple[list[RegionRecord], str]:
    """Load records.json back into RegionRecord objects (policy included)."""
    with open(path) as fh:
        payload = json.load(fh)
    records = [
        RegionRecord(
            region_id=raw["region_id"],
            scene_id=raw["scene_id"],
            area=int(raw["area"]),
            base_iou=float(raw["base_iou"]),
            fused_iou=float(raw["fused_iou"]),
            gated=bool(raw["gated"]),
            solo_delta_iou=None
            if raw["solo_delta_iou"] is None
            else float(raw["solo_delta_iou"]),
            best_similarity=None
            if raw["best_similarity"] is None
            else float(raw["best_similarity"]),
            mean_mi=float(raw["mean_mi"]),
            mean_entropy=float(raw["mean_entropy"]),
            mean_epkl=float(raw["mean_epkl"]),
            max_prob=float(raw["max_prob"]),
            margin=float(raw["margin"]),
        )
        for raw in payload["records"]
    ]
    return records, payload["policy"]


def evaluate_run(run_dir: str | Path, out_dir: str | Path | None = None) -> evaluation.EvalReport:
    """Read a run's records and emit the full report tree."""
    run_dir = Path(run_dir)
    records, policy = read_records(run_dir / "records.json")
    report = evaluation.evaluate(records, policy)
    evaluation.emit_report(report, records, out_dir if out_dir is not None else run_dir)
    return report
