import csv
import json
import math

import mpmath
import numpy as np
import pytest
import scipy.special
import scipy.stats

from segrefine import evaluation
from segrefine.evaluation import (
    RegionRecord,
    betainc_regularized,
    bucket_of,
    emit_report,
    evaluate,
    pearson,
    region_iou,
    report_to_dict,
    t_sf_two_sided,
    write_regions_csv,
)


def iou_oracle(pred, gt, class_count, void_label=255):
    valid = gt != void_label
    if not valid.any():
        return 1.0
    classes = set(np.unique(gt[valid])) | set(np.unique(pred[valid]))
    classes = [c for c in classes if c != void_label]
    scores = []
    for c in classes:
        inter = int(((pred == c) & (gt == c) & valid).sum())
        union = int((((pred == c) | (gt == c)) & valid).sum())
        if union:
            scores.append(inter / union)
    return sum(scores) / len(scores) if scores else 1.0


def test_iou_identity():
    gt = np.array([[0, 1], [2, 1]])
    assert region_iou(gt, gt, class_count=3) == 1.0


def test_iou_worked_example():
    pred = np.array([[0, 0], [1, 1]])
    gt = np.array([[0, 1], [1, 1]])
    assert region_iou(pred, gt, class_count=2) == pytest.approx(0.583333, abs=1e-6)


def test_iou_disjoint_is_zero():
    pred = np.zeros((2, 2), dtype=np.int64)
    gt = np.ones((2, 2), dtype=np.int64)
    assert region_iou(pred, gt, class_count=2) == 0.0


def test_iou_all_void_is_one():
    pred = np.zeros((2, 2), dtype=np.int64)
    gt = np.full((2, 2), 255, dtype=np.int64)
    assert region_iou(pred, gt, class_count=2) == 1.0


def test_iou_void_pixels_excluded():
    pred = np.array([[0, 1]])
    gt = np.array([[0, 255]])
    assert region_iou(pred, gt, class_count=2) == 1.0


def test_iou_matches_set_counting_oracle(rng):
    for _ in range(200):
        h = int(rng.integers(1, 12))
        w = int(rng.integers(1, 12))
        c = int(rng.integers(2, 6))
        pred = rng.integers(0, c, size=(h, w))
        gt = rng.integers(0, c, size=(h, w))
        gt[rng.uniform(size=(h, w)) < 0.15] = 255
        assert region_iou(pred, gt, class_count=c) == pytest.approx(
            iou_oracle(pred, gt, c), abs=1e-12
        )


def test_betainc_matches_scipy(rng):
    for _ in range(300):
        a = float(rng.uniform(0.5, 60.0))
        b = float(rng.uniform(0.5, 60.0))
        x = float(rng.uniform(0.0, 1.0))
        ours = betainc_regularized(a, b, x)
        ref = float(scipy.special.betainc(a, b, x))
        assert abs(ours - ref) < 1e-9, (a, b, x)


def test_t_tail_matches_scipy(rng):
    for df in (3, 10, 97, 937):
        for _ in range(50):
            t = float(rng.uniform(-6.0, 6.0))
            ours = t_sf_two_sided(t, df)
            ref = float(2.0 * scipy.stats.t.sf(abs(t), df))
            assert abs(ours - ref) < 1e-9


def test_pearson_exact_linear():
    xs = [1.0, 2.0, 3.0, 4.0, 5.0]
    res = pearson(xs, [2 * x for x in xs])
    assert res.r == pytest.approx(1.0, abs=1e-12)
    assert res.p_value == 0.0


def test_pearson_symmetric_zero():
    res = pearson([-1.0, 0.0, 1.0], [1.0, 0.0, 1.0])
    assert res.r == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == pytest.approx(1.0, abs=1e-12)


def test_pearson_worked_p_value():
    # reconstruct data with the given r, then check p against the
    # high-precision oracle and the 2-significant-figure quote 0.0274
    n, r = 12, 0.6325
    df = n - 2
    t = r * math.sqrt(df / (1 - r * r))
    mpmath.mp.dps = 40
    x = df / (df + t * t)
    p_ref = float(mpmath.betainc(df / 2.0, 0.5, 0, x, regularized=True))
    assert abs(p_ref - 0.0273087) < 5e-7
    ours = t_sf_two_sided(t, df)
    assert abs(ours - p_ref) < 1e-6
    assert abs(ours - 0.0274) < 5e-4


@pytest.mark.parametrize("n", [5, 12, 100, 939])
def test_pearson_matches_oracles(rng, n):
    xs = rng.normal(size=n)
    ys = 0.4 * xs + rng.normal(scale=0.9, size=n)
    res = pearson(list(xs), list(ys))
    ref_r, ref_p = scipy.stats.pearsonr(xs, ys)
    assert abs(res.r - float(ref_r)) < 1e-9
    assert abs(res.p_value - float(ref_p)) < 1e-6
    assert res.n == n


def test_pearson_rejects_short_and_degenerate():
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_bucket_edges():
    assert bucket_of(0.0) == "low"
    assert bucket_of(0.1999) == "low"
    assert bucket_of(0.2) == "mid"
    assert bucket_of(0.8) == "mid"
    assert bucket_of(0.8001) == "high"
    assert bucket_of(1.0) == "high"


def record(i, base, fused, gated, solo=None, sim=None, mi=0.1):
    return RegionRecord(
        region_id=f"s:{i:03d}",
        scene_id="s",
        area=150,
        base_iou=base,
        fused_iou=fused,
        gated=gated,
        solo_delta_iou=solo,
        best_similarity=sim,
        mean_mi=mi,
        mean_entropy=mi * 2,
        mean_epkl=mi * 3,
        max_prob=0.6,
        margin=0.3,
    )


def test_evaluate_never_gated():
    records = [record(i, 0.5, 0.5, False, solo=0.0, sim=0.4) for i in range(6)]
    report = evaluate(records, "never")
    assert report.gated_count == 0
    assert report.intervention_cost == 0.0
    assert report.mean_delta_iou == 0.0
    assert report.gated_mean_delta_iou is None


def test_evaluate_cost_arithmetic_939():
    records = []
    for i in range(939):
        gated = i < 117
        records.append(record(i, 0.4, 0.5 if gated else 0.4, gated, solo=0.1, sim=0.5))
    report = evaluate(records, "two_stage")
    assert report.region_count == 939
    assert report.gated_count == 117
    assert report.intervention_cost == pytest.approx(117 / 939, abs=1e-12)
    assert round(report.intervention_cost, 3) == 0.125
    assert report.cost_reduction_vs_always_on == pytest.approx(1 - 117 / 939, abs=1e-12)
    assert round(report.cost_reduction_vs_always_on, 3) == 0.875


def test_evaluate_success_rate_all_improving():
    records = [
        record(i, 0.1 + 0.07 * i, 0.2 + 0.07 * i, True, solo=0.1, sim=0.5)
        for i in range(10)
    ]
    report = evaluate(records, "always_on")
    for bucket in report.buckets:
        if bucket.count:
            assert bucket.success_rate == 1.0


def test_evaluate_failure_listing():
    records = [record(0, 0.9, 0.4, True, solo=-0.5, sim=0.9)]
    records += [record(i, 0.5, 0.6, True, solo=0.1, sim=0.5) for i in range(1, 5)]
    report = evaluate(records, "always_on")
    assert report.failures.count == 1
    assert report.failures.region_ids == ["s:000"]
    assert report.failures.mean_base_iou == pytest.approx(0.9)
    assert report.failures.mean_similarity == pytest.approx(0.9)


def test_evaluate_correlation_table_uses_solo_deltas(rng):
    records = []
    for i in range(40):
        sim = float(rng.uniform(0.1, 0.9))
        solo = 0.6 * sim + float(rng.normal(scale=0.03))
        records.append(record(i, 0.5, 0.5 + solo, True, solo=solo, sim=sim, mi=float(rng.uniform())))
    report = evaluate(records, "always_on")
    by_name = {c.name: c for c in report.correlations}
    assert by_name["best_similarity"].r > 0.9
    assert report.quartile_counts is not None
    assert sum(report.quartile_counts) == 40


def test_report_json_round_trip(tmp_path, rng):
    records = [
        record(i, float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), bool(i % 2),
               solo=float(rng.normal(scale=0.2)), sim=float(rng.uniform()), mi=float(rng.uniform()))
        for i in range(24)
    ]
    report = evaluate(records, "two_stage")
    emit_report(report, records, tmp_path)
    loaded = json.loads((tmp_path / "report.json").read_text())
    assert loaded == report_to_dict(report)
    assert loaded["policy"] == "two_stage"
    assert loaded["region_count"] == 24


def test_csv_structure(tmp_path):
    records = [record(i, 0.5, 0.6, True, solo=0.1, sim=0.5) for i in range(7)]
    write_regions_csv(records, tmp_path / "regions.csv")
    rows = list(csv.reader((tmp_path / "regions.csv").open()))
    assert len(rows) == 8
    assert rows[0] == list(evaluation.CSV_COLUMNS)
    assert rows[1][0] == "s:000"


def test_emit_is_deterministic(tmp_path, rng):
    records = [
        record(i, float(rng.uniform()), float(rng.uniform()), bool(i % 3), solo=0.05,
               sim=float(rng.uniform()), mi=float(rng.uniform()))
        for i in range(12)
    ]
    report = evaluate(records, "two_stage")
    a, b = tmp_path / "a", tmp_path / "b"
    emit_report(report, records, a)
    emit_report(report, records, b)
    for rel in ("report.json", "regions.csv", "plots/metric_vs_delta.csv",
                "plots/quartile_correlations.csv", "plots/cost_vs_improvement.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
