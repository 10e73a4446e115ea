"""Region-level IoU, Pearson correlation with analytic p-values, and the
bucketed improvement report.

The p-value comes from the exact t-distribution tail, evaluated through the
regularized incomplete beta function. That function is implemented here with
a modified Lentz continued fraction so the package has no runtime dependency
on scipy; scipy and mpmath only appear in the test suite as cross-checks.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Bucket edges over base-prediction region IoU. Lower bucket is [0, 0.2),
# middle is [0.2, 0.8], upper is (0.8, 1.0].
BUCKET_LOW = 0.2
BUCKET_HIGH = 0.8
BUCKET_NAMES = ("low", "mid", "high")
FAILURE_DELTA = -0.20

# metrics the correlation table sweeps against the per-region improvement
CANDIDATE_METRICS = (
    "mean_mi",
    "mean_entropy",
    "mean_epkl",
    "max_prob",
    "margin",
    "best_similarity",
    "entropy_x_inv_max_prob",
    "entropy_x_epkl",
)

_BETA_TOL = 1e-10
_BETA_MAX_ITER = 500
_TINY = 1e-300


def region_iou(
    pred_crop: np.ndarray,
    label_crop: np.ndarray,
    class_count: int,
    void_label: int = 255,
) -> float:
    """Mean IoU over the classes present in either crop, void pixels excluded.

    A crop whose ground truth is entirely void has nothing to score and
    counts as perfect (1.0).
    """
    pred = np.asarray(pred_crop)
    gt = np.asarray(label_crop)
    if pred.shape != gt.shape:
        raise ValueError(f"crop shapes differ: {pred.shape} vs {gt.shape}")
    valid = gt != void_label
    if not valid.any():
        return 1.0
    pred = pred[valid]
    gt = gt[valid]
    ious = []
    for c in range(class_count):
        p = pred == c
        g = gt == c
        union = int(np.logical_or(p, g).sum())
        if union == 0:
            continue
        inter = int(np.logical_and(p, g).sum())
        ious.append(inter / union)
    if not ious:
        # every valid pixel agrees on ids outside [0, C); nothing scoreable
        return 1.0
    return float(sum(ious) / len(ious))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            return h
    raise RuntimeError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    # symmetry keeps the continued fraction in its fast-converging region
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: int) -> float:
    """P(|T| >= t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    t2 = t * t
    x = df / (df + t2)
    return betainc_regularized(df / 2.0, 0.5, x)


@dataclass
class CorrelationResult:
    name: str
    n: int
    r: float
    p_value: float


def pearson(xs: Sequence[float], ys: Sequence[float], name: str = "") -> CorrelationResult:
    """Sample Pearson r with the exact two-sided p-value.

    Needs at least 3 pairs and nonzero variance on both sides; |r| is
    clamped into [-1, 1] before the t transform to absorb rounding.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d and the same length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 pairs, got {n}")
    xd = x - x.mean()
    yd = y - y.mean()
    sxx = float(xd @ xd)
    syy = float(yd @ yd)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance input")
    r = float(xd @ yd) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
        p = t_sf_two_sided(abs(t), df)
    return CorrelationResult(name=name, n=n, r=r, p_value=p)


@dataclass
class RegionRecord:
    """One region's evaluation row; the unit the report aggregates over.

    fused_iou reflects the policy actually applied (equal to base_iou for
    regions the gate skipped); solo_delta_iou is the counterfactual change
    from fusing this region alone, used by the correlation analyses.
    """

    region_id: str
    scene_id: str
    area: int
    base_iou: float
    fused_iou: float
    gated: bool
    solo_delta_iou: float | None
    best_similarity: float | None
    mean_mi: float
    mean_entropy: float
    mean_epkl: float
    max_prob: float
    margin: float

    @property
    def delta_iou(self) -> float:
        return self.fused_iou - self.base_iou

    @property
    def success(self) -> bool:
        return self.delta_iou > 0.0

    def metric_value(self, metric: str) -> float | None:
        if metric == "entropy_x_inv_max_prob":
            return self.mean_entropy * (1.0 - self.max_prob)
        if metric == "entropy_x_epkl":
            return self.mean_entropy * self.mean_epkl
        return getattr(self, metric)


def bucket_of(base_iou: float) -> str:
    if base_iou < BUCKET_LOW:
        return "low"
    if base_iou <= BUCKET_HIGH:
        return "mid"
    return "high"


@dataclass
class BucketSummary:
    name: str
    count: int
    gated_count: int
    mean_base_iou: float
    mean_delta_iou: float
    success_rate: float | None  # among gated records in the bucket


@dataclass
class FailureSummary:
    count: int
    mean_base_iou: float | None
    mean_similarity: float | None
    region_ids: list[str]


@dataclass
class EvalReport:
    policy: str
    region_count: int
    gated_count: int
    mean_base_iou: float
    mean_fused_iou: float
    mean_delta_iou: float
    gated_mean_delta_iou: float | None
    intervention_cost: float  # gated fraction of the population
    cost_reduction_vs_always_on: float
    always_on_mean_delta_iou: float
    buckets: list[BucketSummary]
    failures: FailureSummary
    correlations: list[CorrelationResult] = field(default_factory=list)
    quartile_boundaries: tuple[float, float, float] | None = None
    quartile_counts: tuple[int, int, int, int] | None = None
    quartile_correlations: list[CorrelationResult | None] = field(default_factory=list)


def _correlation_table(records: Sequence[RegionRecord]) -> list[CorrelationResult]:
    """Each candidate metric against the counterfactual improvement.

    Restricted to records where retrieval actually ran (solo delta known).
    Metrics that are degenerate on that subset are skipped.
    """
    usable = [r for r in records if r.solo_delta_iou is not None]
    out = []
    for metric in CANDIDATE_METRICS:
        pairs = [
            (r.metric_value(metric), r.solo_delta_iou)
            for r in usable
            if r.metric_value(metric) is not None
        ]
        try:
            out.append(
                pearson([p[0] for p in pairs], [p[1] for p in pairs], name=metric)
            )
        except ValueError:
            continue
    return out


def evaluate(records: Sequence[RegionRecord], policy: str) -> EvalReport:
    """Aggregate per-region records into the bucketed report.

    Bucket mean deltas run over every record in the bucket (skipped regions
    contribute 0 through fused == base), which keeps policies with different
    gate rates comparable; bucket success rates run over the gated records
    only. The always_on comparison reuses the counterfactual solo deltas.
    """
    if not records:
        raise ValueError("no records to evaluate")
    base = np.array([r.base_iou for r in records], dtype=np.float64)
    fused = np.array([r.fused_iou for r in records], dtype=np.float64)
    delta = fused - base
    gated = [r for r in records if r.gated]

    buckets = []
    names = [bucket_of(r.base_iou) for r in records]
    for name in BUCKET_NAMES:
        idx = [i for i, b in enumerate(names) if b == name]
        in_bucket_gated = [records[i] for i in idx if records[i].gated]
        rate = (
            sum(1 for r in in_bucket_gated if r.success) / len(in_bucket_gated)
            if in_bucket_gated
            else None
        )
        buckets.append(
            BucketSummary(
                name=name,
                count=len(idx),
                gated_count=len(in_bucket_gated),
                mean_base_iou=float(base[idx].mean()) if idx else 0.0,
                mean_delta_iou=float(delta[idx].mean()) if idx else 0.0,
                success_rate=rate,
            )
        )

    failed = [r for r in records if r.delta_iou < FAILURE_DELTA]
    fail_sims = [r.best_similarity for r in failed if r.best_similarity is not None]
    failures = FailureSummary(
        count=len(failed),
        mean_base_iou=float(np.mean([r.base_iou for r in failed])) if failed else None,
        mean_similarity=float(np.mean(fail_sims)) if fail_sims else None,
        region_ids=[r.region_id for r in failed],
    )

    solo = np.array(
        [r.solo_delta_iou if r.solo_delta_iou is not None else 0.0 for r in records],
        dtype=np.float64,
    )

    report = EvalReport(
        policy=policy,
        region_count=len(records),
        gated_count=len(gated),
        mean_base_iou=float(base.mean()),
        mean_fused_iou=float(fused.mean()),
        mean_delta_iou=float(delta.mean()),
        gated_mean_delta_iou=float(np.mean([r.delta_iou for r in gated])) if gated else None,
        intervention_cost=len(gated) / len(records),
        cost_reduction_vs_always_on=1.0 - len(gated) / len(records),
        always_on_mean_delta_iou=float(solo.mean()),
        buckets=buckets,
        failures=failures,
        correlations=_correlation_table(records),
    )

    if len(records) >= 4:
        from .gating import GateMetrics, stratify_by_mi  # deferred: gating imports us

        population = [
            GateMetrics(
                region_id=r.region_id,
                scene_id=r.scene_id,
                mean_mi=r.mean_mi,
                mean_entropy=r.mean_entropy,
                mean_epkl=r.mean_epkl,
                max_prob=r.max_prob,
                margin=r.margin,
                best_similarity=r.best_similarity,
            )
            for r in records
        ]
        strat = stratify_by_mi(
            population,
            delta_iou=[r.solo_delta_iou if r.solo_delta_iou is not None else 0.0 for r in records],
        )
        report.quartile_boundaries = strat.boundaries
        report.quartile_counts = strat.quartile_counts
        report.quartile_correlations = strat.correlations
    return report


def _fmt(x: float | None) -> float | None:
    """Round-trip floats through %.9g so serialized reports are byte-stable."""
    if x is None:
        return None
    return float(f"{x:.9g}")


def _corr_dict(c: CorrelationResult | None) -> dict | None:
    if c is None:
        return None
    return {"name": c.name, "n": c.n, "r": _fmt(c.r), "p_value": _fmt(c.p_value)}


def report_to_dict(report: EvalReport) -> dict:
    return {
        "policy": report.policy,
        "region_count": report.region_count,
        "gated_count": report.gated_count,
        "mean_base_iou": _fmt(report.mean_base_iou),
        "mean_fused_iou": _fmt(report.mean_fused_iou),
        "mean_delta_iou": _fmt(report.mean_delta_iou),
        "gated_mean_delta_iou": _fmt(report.gated_mean_delta_iou),
        "intervention_cost": _fmt(report.intervention_cost),
        "cost_reduction_vs_always_on": _fmt(report.cost_reduction_vs_always_on),
        "always_on_mean_delta_iou": _fmt(report.always_on_mean_delta_iou),
        "buckets": [
            {
                "name": b.name,
                "count": b.count,
                "gated_count": b.gated_count,
                "mean_base_iou": _fmt(b.mean_base_iou),
                "mean_delta_iou": _fmt(b.mean_delta_iou),
                "success_rate": _fmt(b.success_rate),
            }
            for b in report.buckets
        ],
        "failures": {
            "count": report.failures.count,
            "mean_base_iou": _fmt(report.failures.mean_base_iou),
            "mean_similarity": _fmt(report.failures.mean_similarity),
            "region_ids": report.failures.region_ids,
        },
        "correlations": [_corr_dict(c) for c in report.correlations],
        "quartiles": {
            "boundaries": [_fmt(b) for b in report.quartile_boundaries]
            if report.quartile_boundaries is not None
            else None,
            "counts": list(report.quartile_counts)
            if report.quartile_counts is not None
            else None,
            "correlations": [_corr_dict(c) for c in report.quartile_correlations],
        },
    }


CSV_COLUMNS = [
    "region_id",
    "scene_id",
    "area",
    "base_iou",
    "fused_iou",
    "delta_iou",
    "solo_delta_iou",
    "gated",
    "success",
    "best_similarity",
    "mean_mi",
    "mean_entropy",
    "mean_epkl",
    "max_prob",
    "margin",
]


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def write_regions_csv(records: Sequence[RegionRecord], path) -> None:
    """Flat per-region CSV, one row per record in the given order."""
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in records:
            row = [
                r.region_id,
                r.scene_id,
                r.area,
                r.base_iou,
                r.fused_iou,
                r.delta_iou,
                r.solo_delta_iou,
                r.gated,
                r.success,
                r.best_similarity,
                r.mean_mi,
                r.mean_entropy,
                r.mean_epkl,
                r.max_prob,
                r.margin,
            ]
            fh.write(",".join(_cell(c) for c in row) + "\n")


def _write_scatter(records: Sequence[RegionRecord], path) -> None:
    cols = ["region_id"] + list(CANDIDATE_METRICS) + ["solo_delta_iou"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in records:
            if r.solo_delta_iou is None:
                continue
            row = [r.region_id]
            row += [r.metric_value(m) for m in CANDIDATE_METRICS]
            row.append(r.solo_delta_iou)
            fh.write(",".join(_cell(c) for c in row) + "\n")


def _write_quartile_bars(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("quartile,count,r,p_value,n\n")
        for q in range(4):
            count = report.quartile_counts[q] if report.quartile_counts else 0
            c = (
                report.quartile_correlations[q]
                if q < len(report.quartile_correlations)
                else None
            )
            if c is None:
                fh.write(f"{q + 1},{count},,,\n")
            else:
                fh.write(f"{q + 1},{count},{_cell(_fmt(c.r))},{_cell(_fmt(c.p_value))},{c.n}\n")


def _write_cost_curve(records: Sequence[RegionRecord], path) -> None:
    """Cumulative mean counterfactual improvement when targeting the top
    cost-fraction of regions ranked by retrieval similarity."""
    usable = [
        r
        for r in records
        if r.solo_delta_iou is not None and r.best_similarity is not None
    ]
    usable.sort(key=lambda r: (-r.best_similarity, r.region_id))
    n = len(records)
    with open(path, "w") as fh:
        fh.write("rank,cost,mean_delta_iou\n")
        total = 0.0
        for k, r in enumerate(usable, start=1):
            total += r.solo_delta_iou
            fh.write(f"{k},{k / n:.9g},{total / k:.9g}\n")


def emit_report(report: EvalReport, records: Sequence[RegionRecord], out_dir) -> None:
    """Write report.json, regions.csv, and the plots/ data series."""
    os.makedirs(out_dir, exist_ok=True)
    plots = os.path.join(out_dir, "plots")
    os.makedirs(plots, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_regions_csv(records, os.path.join(out_dir, "regions.csv"))
    _write_scatter(records, os.path.join(plots, "metric_vs_delta.csv"))
    _write_quartile_bars(report, os.path.join(plots, "quartile_correlations.csv"))
    _write_cost_curve(records, os.path.join(plots, "cost_vs_improvement.csv"))
