"""Gating metrics, MI-quartile stratification, and gate policies.

Every candidate gating signal is computed per region (means over the
component mask, not the bbox). The two-stage gate first keeps the third
mutual-information quartile of the population, then the top half of those
survivors by retrieval similarity. Alternative policies cover the always-on
baseline, the ground-truth "combined" oracle, and generic top-fraction
sweeps over any metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .evaluation import CorrelationResult, pearson, region_iou
from .regions import RegionProposal
from .retrieval import RetrievalMatch

POLICIES = ("two_stage", "always_on", "never", "oracle_combined_top25", "topk_by")


@dataclass
class GateMetrics:
    region_id: str
    scene_id: str
    mean_mi: float
    mean_entropy: float
    mean_epkl: float
    max_prob: float  # mean over region pixels of the mean member's max class prob
    margin: float  # mean over region pixels of top1 - top2 prob
    best_similarity: float | None = None
    base_iou: float | None = None  # oracle-only
    combined_oracle: float | None = None  # uncertainty * (1 - base_iou)

    def value(self, metric: str) -> float:
        """Look up a metric by name, including the derived combinations."""
        if metric == "entropy_x_inv_max_prob":
            return self.mean_entropy * (1.0 - self.max_prob)
        if metric == "entropy_x_epkl":
            return self.mean_entropy * self.mean_epkl
        v = getattr(self, metric)
        if v is None:
            raise ValueError(f"metric {metric!r} unavailable for region {self.region_id}")
        return float(v)


@dataclass
class StratificationResult:
    boundaries: tuple[float, float, float]  # 25/50/75 percentile cuts of mean_mi
    assignments: dict[str, int]  # region_id -> quartile 1..4
    quartile_counts: tuple[int, int, int, int]
    correlations: list[CorrelationResult | None] = field(default_factory=lambda: [None] * 4)


@dataclass
class GateDecision:
    region_id: str
    policy: str
    passed: bool
    stage1_passed: bool
    metrics: GateMetrics
    matches: list[RetrievalMatch] = field(default_factory=list)


def compute_metrics(
    region: RegionProposal,
    entropy_map: np.ndarray,
    mi_map: np.ndarray,
    epkl_map: np.ndarray,
    mean_probs: np.ndarray,
    scene_id: str,
    labels: np.ndarray | None = None,
    base_pred: np.ndarray | None = None,
    class_count: int | None = None,
    void_label: int = 255,
    oracle_kind: str = "mutual_information",
) -> GateMetrics:
    """All gating signals for one region; means taken over the mask pixels.

    When ground truth is supplied the oracle fields (base_iou over the bbox
    crop, combined_oracle) are filled in as well.
    """
    mask = region.mask
    mean_mi = float(mi_map[mask].astype(np.float64).mean())
    mean_entropy = float(entropy_map[mask].astype(np.float64).mean())
    mean_epkl = float(epkl_map[mask].astype(np.float64).mean())

    pix = mean_probs[:, mask].astype(np.float64)  # [C, n]
    top2 = np.sort(pix, axis=0)[-2:, :]
    max_prob = float(top2[1].mean())
    margin = float((top2[1] - top2[0]).mean())

    base_iou = combined = None
    if labels is not None:
        if base_pred is None or class_count is None:
            raise ValueError("base_pred and class_count required with labels")
        sy, sx = region.bbox_slices
        base_iou = region_iou(base_pred[sy, sx], labels[sy, sx], class_count, void_label)
        unc = {"entropy": mean_entropy, "mutual_information": mean_mi, "epkl": mean_epkl}[
            oracle_kind
        ]
        combined = unc * (1.0 - base_iou)
    return GateMetrics(
        region_id=region.region_id,
        scene_id=scene_id,
        mean_mi=mean_mi,
        mean_entropy=mean_entropy,
        mean_epkl=mean_epkl,
        max_prob=max_prob,
        margin=margin,
        base_iou=base_iou,
        combined_oracle=combined,
    )


def _percentile(sorted_vals: np.ndarray, q: float) -> float:
    rank = (sorted_vals.size - 1) * q / 100.0
    lo = int(np.floor(rank))
    hi = int(np.ceil(rank))
    return float(sorted_vals[lo] + (rank - lo) * (sorted_vals[hi] - sorted_vals[lo]))


def assign_quartile(mi: float, cuts: tuple[float, float, float]) -> int:
    # Tested top-down so boundary hits resolve deterministically: an exact
    # c50 falls in Q2, an exact c75 in Q4, and an all-equal population is Q4.
    c25, c50, c75 = cuts
    if mi >= c75:
        return 4
    if mi > c50:
        return 3
    if mi >= c25:
        return 2
    return 1


def stratify_by_mi(
    population: Sequence[GateMetrics],
    delta_iou: Sequence[float] | None = None,
) -> StratificationResult:
    """Quartile cuts of mean_mi over the population, plus assignments.

    When per-region delta_iou values are supplied (aligned with the
    population), the per-quartile Pearson correlation between
    best_similarity and delta_iou is computed; quartiles with fewer than 3
    usable pairs or degenerate variance get None.
    """
    if len(population) < 4:
        raise ValueError(f"need at least 4 regions to stratify, got {len(population)}")
    mis = np.sort(np.array([m.mean_mi for m in population], dtype=np.float64))
    cuts = (_percentile(mis, 25.0), _percentile(mis, 50.0), _percentile(mis, 75.0))
    assignments = {m.region_id: assign_quartile(m.mean_mi, cuts) for m in population}
    counts = [0, 0, 0, 0]
    for q in assignments.values():
        counts[q - 1] += 1

    correlations: list[CorrelationResult | None] = [None] * 4
    if delta_iou is not None:
        if len(delta_iou) != len(population):
            raise ValueError("delta_iou must align with the population")
        for q in (1, 2, 3, 4):
            xs, ys = [], []
            for m, d in zip(population, delta_iou):
                if assignments[m.region_id] == q and m.best_similarity is not None:
                    xs.append(m.best_similarity)
                    ys.append(float(d))
            try:
                correlations[q - 1] = pearson(xs, ys, name=f"q{q}_similarity")
            except ValueError:
                correlations[q - 1] = None
    return StratificationResult(
        boundaries=cuts,
        assignments=assignments,
        quartile_counts=tuple(counts),
        correlations=correlations,
    )


MatchFetcher = Callable[[str], list[RetrievalMatch]]


def gate(
    policy: str,
    population: Sequence[GateMetrics],
    fetch_matches: MatchFetcher,
    metric: str | None = None,
    fraction: float | None = None,
) -> list[GateDecision]:
    """Apply a gate policy to the whole region population.

    Decisions come back in population order. ``fetch_matches`` is called only
    for regions whose policy requires retrieval; a region whose retrieval
    comes back empty can never pass (fused output would be undefined).
    """
    if policy == "two_stage":
        return _gate_two_stage(population, fetch_matches)
    if policy == "always_on":
        return _finalize("always_on", population, fetch_matches, set(p.region_id for p in population), stage1=None)
    if policy == "never":
        return [
            GateDecision(m.region_id, "never", passed=False, stage1_passed=False, metrics=m)
            for m in population
        ]
    if policy == "oracle_combined_top25":
        missing = [m.region_id for m in population if m.combined_oracle is None]
        if missing:
            raise ValueError(
                f"oracle_combined_top25 needs ground truth; missing for {missing[:3]}..."
            )
        k = int(np.floor(0.25 * len(population)))
        ranked = sorted(population, key=lambda m: (-m.combined_oracle, m.region_id))
        chosen = set(m.region_id for m in ranked[:k])
        return _finalize("oracle_combined_top25", population, fetch_matches, chosen, stage1=None)
    if policy == "topk_by":
        if metric is None or fraction is None:
            raise ValueError("topk_by requires metric and fraction")
        if metric == "best_similarity":
            for m in population:
                if m.best_similarity is None:
                    matches = fetch_matches(m.region_id)
                    m.best_similarity = matches[0].region_similarity if matches else float("-inf")
        k = int(np.floor(fraction * len(population)))
        ranked = sorted(population, key=lambda m: (-m.value(metric), m.region_id))
        chosen = set(m.region_id for m in ranked[:k])
        return _finalize("topk_by", population, fetch_matches, chosen, stage1=None)
    raise ValueError(f"unknown gate policy {policy!r}; expected one of {POLICIES}")


def _gate_two_stage(
    population: Sequence[GateMetrics], fetch_matches: MatchFetcher
) -> list[GateDecision]:
    strat = stratify_by_mi(population)
    survivors = [m for m in population if strat.assignments[m.region_id] == 3]
    cache: dict[str, list[RetrievalMatch]] = {}
    for m in survivors:
        cache[m.region_id] = fetch_matches(m.region_id)
        if cache[m.region_id]:
            m.best_similarity = cache[m.region_id][0].region_similarity
    k = len(survivors) // 2
    eligible = [m for m in survivors if cache[m.region_id]]
    eligible.sort(key=lambda m: (-m.best_similarity, m.region_id))
    chosen = set(m.region_id for m in eligible[:k])

    stage1 = set(m.region_id for m in survivors)
    decisions = []
    for m in population:
        s1 = m.region_id in stage1
        passed = m.region_id in chosen
        decisions.append(
            GateDecision(
                region_id=m.region_id,
                policy="two_stage",
                passed=passed,
                stage1_passed=s1,
                metrics=m,
                matches=cache.get(m.region_id, []) if s1 else [],
            )
        )
    return decisions


def _finalize(
    policy: str,
    population: Sequence[GateMetrics],
    fetch_matches: MatchFetcher,
    chosen: set[str],
    stage1: set[str] | None,
) -> list[GateDecision]:
    """Fetch matches for chosen regions; an empty retrieval demotes to fail."""
    decisions = []
    for m in population:
        want = m.region_id in chosen
        matches = fetch_matches(m.region_id) if want else []
        passed = want and bool(matches)
        if matches:
            m.best_similarity = matches[0].region_similarity
        decisions.append(
            GateDecision(
                region_id=m.region_id,
                policy=policy,
                passed=passed,
                stage1_passed=(m.region_id in stage1) if stage1 is not None else passed,
                metrics=m,
                matches=matches,
            )
        )
    return decisions
