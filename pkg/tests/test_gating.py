import numpy as np
import pytest

from segrefine.gating import (
    GateMetrics,
    assign_quartile,
    compute_metrics,
    gate,
    stratify_by_mi,
)
from segrefine.regions import RegionProposal
from segrefine.retrieval import BankEntry, RegionFeature, RetrievalMatch


def metric(i, mi, sim=None, oracle=None):
    return GateMetrics(
        region_id=f"s:{i:03d}",
        scene_id="s",
        mean_mi=mi,
        mean_entropy=mi * 2.0,
        mean_epkl=mi * 3.0,
        max_prob=0.5,
        margin=0.25,
        best_similarity=sim,
        combined_oracle=oracle,
    )


def dummy_match(sim=0.5):
    entry = BankEntry(
        scene_id="b",
        region_id="b:000",
        feature=RegionFeature("b:000", np.array([1.0, 0, 0, 0], dtype=np.float32)),
        bbox=(0, 0, 1, 1),
        label_crop=np.zeros((2, 2), dtype=np.int32),
        source_uncertainty=0.2,
    )
    return RetrievalMatch(entry=entry, region_similarity=sim, global_similarity=0.8)


def test_quartile_worked_example():
    pop = [metric(i, float(i)) for i in range(1, 9)]
    strat = stratify_by_mi(pop)
    assert strat.boundaries == (2.75, 4.5, 6.25)
    q3 = sorted(r for r, q in strat.assignments.items() if q == 3)
    assert q3 == ["s:005", "s:006"]
    assert strat.quartile_counts == (2, 2, 2, 2)


def test_quartile_all_equal_goes_to_q4():
    pop = [metric(i, 0.7) for i in range(6)]
    strat = stratify_by_mi(pop)
    assert strat.quartile_counts == (0, 0, 0, 6)


def test_quartile_band_membership():
    cuts = (2.75, 4.5, 6.25)
    assert assign_quartile(1.0, cuts) == 1
    assert assign_quartile(2.75, cuts) == 2
    assert assign_quartile(4.5, cuts) == 2
    assert assign_quartile(4.5001, cuts) == 3
    assert assign_quartile(6.25, cuts) == 4
    assert assign_quartile(9.0, cuts) == 4


def test_939_distinct_mi_gives_234_in_q3():
    rng = np.random.default_rng(0)
    values = rng.permutation(np.linspace(0.01, 0.99, 939))
    pop = [metric(i, float(v)) for i, v in enumerate(values)]
    strat = stratify_by_mi(pop)
    assert strat.quartile_counts[2] == 234


def test_two_stage_939_passes_117():
    rng = np.random.default_rng(1)
    values = rng.permutation(np.linspace(0.01, 0.99, 939))
    sims = rng.uniform(0.2, 0.95, size=939)
    pop = [metric(i, float(v), sim=None) for i, v in enumerate(values)]
    fetched = []

    def fetch(region_id):
        fetched.append(region_id)
        i = int(region_id.split(":")[1])
        return [dummy_match(float(sims[i]))]

    decisions = gate("two_stage", pop, fetch)
    passed = [d for d in decisions if d.passed]
    assert len(passed) == 117
    strat = stratify_by_mi(pop)
    stage1 = {r for r, q in strat.assignments.items() if q == 3}
    assert set(fetched) == stage1
    # stage 2: the 117 highest best-similarity survivors
    ranked = sorted(stage1, key=lambda r: (-sims[int(r.split(":")[1])], r))
    assert {d.region_id for d in passed} == set(ranked[:117])
    for d in decisions:
        assert d.stage1_passed == (d.region_id in stage1)


def test_two_stage_stage2_tie_breaks_by_region_id():
    pop = [metric(i, float(i)) for i in range(1, 9)]

    def fetch(region_id):
        return [dummy_match(0.5)]

    decisions = gate("two_stage", pop, fetch)
    passed = [d.region_id for d in decisions if d.passed]
    # Q3 = {s:005, s:006}, equal similarity, keep floor(2/2)=1 by id
    assert passed == ["s:005"]


def test_always_on_passes_everything():
    pop = [metric(i, float(i)) for i in range(5)]
    decisions = gate("always_on", pop, lambda r: [dummy_match(0.4)])
    assert all(d.passed for d in decisions)
    assert all(d.metrics.best_similarity == 0.4 for d in decisions)


def test_never_passes_nothing_and_never_fetches():
    pop = [metric(i, float(i)) for i in range(5)]

    def fetch(region_id):
        raise AssertionError("never policy must not retrieve")

    decisions = gate("never", pop, fetch)
    assert not any(d.passed for d in decisions)


def test_empty_retrieval_fails_the_region():
    pop = [metric(i, float(i)) for i in range(4)]
    decisions = gate("always_on", pop, lambda r: [])
    assert not any(d.passed for d in decisions)


def test_oracle_top25_picks_largest_combined():
    pop = [metric(i, 0.5, oracle=float(i)) for i in range(8)]
    decisions = gate("oracle_combined_top25", pop, lambda r: [dummy_match()])
    passed = sorted(d.region_id for d in decisions if d.passed)
    assert passed == ["s:006", "s:007"]


def test_oracle_top25_requires_ground_truth():
    pop = [metric(i, 0.5) for i in range(4)]
    with pytest.raises(ValueError):
        gate("oracle_combined_top25", pop, lambda r: [dummy_match()])


def test_topk_by_fraction():
    pop = [metric(i, float(i)) for i in range(10)]
    decisions = gate("topk_by", pop, lambda r: [dummy_match()], metric="mean_mi", fraction=0.3)
    passed = sorted(d.region_id for d in decisions if d.passed)
    assert passed == ["s:007", "s:008", "s:009"]


def test_topk_by_requires_params():
    pop = [metric(i, float(i)) for i in range(4)]
    with pytest.raises(ValueError):
        gate("topk_by", pop, lambda r: [dummy_match()])


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        gate("sometimes", [metric(0, 0.1)], lambda r: [])


def test_derived_metric_values():
    m = metric(0, 0.2)
    assert m.value("mean_mi") == pytest.approx(0.2)
    assert m.value("entropy_x_inv_max_prob") == pytest.approx(0.4 * 0.5)
    assert m.value("entropy_x_epkl") == pytest.approx(0.4 * 0.6)


def test_stratify_needs_four():
    with pytest.raises(ValueError):
        stratify_by_mi([metric(i, float(i)) for i in range(3)])


def test_stratify_correlations_per_quartile():
    rng = np.random.default_rng(5)
    pop = []
    deltas = []
    for i in range(40):
        sim = float(rng.uniform(0.1, 0.9))
        pop.append(metric(i, float(rng.uniform()), sim=sim))
        deltas.append(0.5 * sim + float(rng.normal(scale=0.05)))
    strat = stratify_by_mi(pop, delta_iou=deltas)
    present = [c for c in strat.correlations if c is not None]
    assert present
    for corr in present:
        assert corr.n >= 3
        assert corr.r > 0


def _region_fixture():
    h = w = 8
    mask = np.zeros((h, w), dtype=bool)
    mask[2:5, 2:5] = True
    prop = RegionProposal("s:000", (2, 2, 4, 4), mask, 9, 0.5)
    entropy = np.full((h, w), 0.1)
    mi = np.full((h, w), 0.05)
    epkl = np.full((h, w), 0.2)
    # bbox contains pixels outside the mask at much higher values; the means
    # must follow the mask
    mi[2:5, 2:5] = 0.3
    mi[1, 2] = 50.0
    probs = np.zeros((2, h, w), dtype=np.float32)
    probs[0] = 0.8
    probs[1] = 0.2
    return prop, entropy, mi, epkl, probs


def test_compute_metrics_uses_mask_not_bbox():
    prop, entropy, mi, epkl, probs = _region_fixture()
    m = compute_metrics(prop, entropy, mi, epkl, probs, "s")
    assert m.mean_mi == pytest.approx(0.3)
    assert m.mean_entropy == pytest.approx(0.1)
    assert m.mean_epkl == pytest.approx(0.2)
    assert m.max_prob == pytest.approx(0.8)
    assert m.margin == pytest.approx(0.6)


def test_compute_metrics_one_hot_confidence():
    prop, entropy, mi, epkl, probs = _region_fixture()
    probs[0] = 1.0
    probs[1] = 0.0
    m = compute_metrics(prop, entropy, mi, epkl, probs, "s")
    assert m.max_prob == pytest.approx(1.0)
    assert m.margin == pytest.approx(1.0)


def test_compute_metrics_uniform_two_class():
    prop, entropy, mi, epkl, probs = _region_fixture()
    probs[:] = 0.5
    m = compute_metrics(prop, entropy, mi, epkl, probs, "s")
    assert m.max_prob == pytest.approx(0.5)
    assert m.margin == pytest.approx(0.0)


def test_compute_metrics_oracle_fields():
    prop, entropy, mi, epkl, probs = _region_fixture()
    labels = np.zeros((8, 8), dtype=np.int32)
    base_pred = np.zeros((8, 8), dtype=np.int64)
    m = compute_metrics(
        prop, entropy, mi, epkl, probs, "s",
        labels=labels, base_pred=base_pred, class_count=2,
    )
    assert m.base_iou == pytest.approx(1.0)
    assert m.combined_oracle == pytest.approx(0.3 * (1.0 - 1.0))
