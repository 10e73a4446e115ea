import math

import numpy as np
import pytest

from segrefine import uncertainty
from segrefine.uncertainty import (
    ensemble_mean,
    epkl,
    mutual_information,
    predictive_entropy,
    softmax_logits,
)

EPS = 1e-12


def _random_members(rng, k, c, n):
    """k prob maps of shape [c, 1, n] with strictly positive entries."""
    raw = rng.uniform(0.05, 1.0, size=(k, c, 1, n))
    return [(m / m.sum(axis=0, keepdims=True)).astype(np.float32) for m in raw]


def _entropy_loop(p):
    return -sum(pi * math.log(max(pi, EPS)) for pi in p)


def test_softmax_uniform_on_equal_logits():
    logits = np.zeros((1, 19, 2, 2), dtype=np.float32)
    probs = softmax_logits(logits)[0]
    assert np.allclose(probs, 1.0 / 19, atol=1e-7)


def test_softmax_worked_pair():
    logits = np.array([math.log(9.0), 0.0], dtype=np.float32).reshape(1, 2, 1, 1)
    probs = softmax_logits(logits)[0][:, 0, 0]
    assert np.allclose(probs, [0.9, 0.1], atol=1e-6)


def test_softmax_shift_invariance():
    # logits quantized to sixteenths stay exactly representable after the
    # shift, so any difference is the softmax's own, not f32 rounding
    rng = np.random.default_rng(1)
    logits = (rng.integers(-80, 80, size=(1, 5, 3, 3)) / 16.0).astype(np.float32)
    shifted = logits + 1024.0
    a = softmax_logits(logits)[0]
    b = softmax_logits(shifted)[0]
    assert np.allclose(a, b, atol=1e-6)


def test_softmax_rows_sum_to_one(rng):
    logits = rng.normal(scale=5.0, size=(3, 7, 4, 4)).astype(np.float32)
    for probs in softmax_logits(logits):
        assert np.allclose(probs.sum(axis=0), 1.0, atol=1e-5)
        assert probs.min() >= 0.0 and probs.max() <= 1.0


def test_mean_of_identical_members():
    rng = np.random.default_rng(2)
    member = _random_members(rng, 1, 4, 6)[0]
    mean = ensemble_mean([member, member, member])
    assert np.allclose(mean, member, atol=1e-7)


def test_mean_worked_pair():
    a = np.array([0.9, 0.1], dtype=np.float32).reshape(2, 1, 1)
    b = np.array([0.5, 0.5], dtype=np.float32).reshape(2, 1, 1)
    mean = ensemble_mean([a, b])
    assert np.allclose(mean[:, 0, 0], [0.7, 0.3], atol=1e-7)


def test_mean_sums_to_one(rng):
    members = _random_members(rng, 5, 19, 50)
    mean = ensemble_mean(members)
    assert np.allclose(mean.sum(axis=0), 1.0, atol=1e-5)


def test_entropy_uniform_is_ln_c():
    probs = np.full((19, 1, 1), 1.0 / 19, dtype=np.float32)
    h = predictive_entropy(probs)[0, 0]
    assert f"{h:.6f}" == "2.944439"
    assert abs(h - math.log(19)) < 1e-6


def test_entropy_one_hot_is_zero():
    probs = np.zeros((4, 1, 1), dtype=np.float32)
    probs[2] = 1.0
    assert abs(predictive_entropy(probs)[0, 0]) < 1e-9


def test_entropy_worked_value():
    probs = np.array([0.7, 0.3], dtype=np.float32).reshape(2, 1, 1)
    h = predictive_entropy(probs)[0, 0]
    assert f"{h:.6f}" == "0.610864"


def test_mi_zero_for_identical_members(rng):
    member = _random_members(rng, 1, 6, 8)[0]
    mi = mutual_information([member] * 4)
    assert np.abs(mi).max() < 1e-6


def test_mi_worked_value():
    a = np.array([0.9, 0.1], dtype=np.float32).reshape(2, 1, 1)
    b = np.array([0.5, 0.5], dtype=np.float32).reshape(2, 1, 1)
    mi = mutual_information([a, b])[0, 0]
    assert f"{mi:.6f}" == "0.101749"


def test_mi_bounded_by_predictive_entropy(rng):
    members = _random_members(rng, 5, 19, 200)
    mi = mutual_information(members)
    h = predictive_entropy(ensemble_mean(members))
    assert (mi <= h + 1e-6).all()
    assert (mi >= -1e-9).all()


def test_epkl_zero_for_identical_members(rng):
    member = _random_members(rng, 1, 3, 5)[0]
    assert np.abs(epkl([member] * 3)).max() < 1e-6


def test_epkl_worked_value():
    a = np.array([0.9, 0.1], dtype=np.float32).reshape(2, 1, 1)
    b = np.array([0.5, 0.5], dtype=np.float32).reshape(2, 1, 1)
    val = epkl([a, b])[0, 0]
    assert f"{val:.6f}" == "0.439445"


def test_epkl_member_order_invariant(rng):
    members = _random_members(rng, 4, 7, 9)
    a = epkl(members)
    b = epkl(members[::-1])
    assert np.allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("k,c", [(2, 2), (2, 19), (5, 2), (5, 19)])
def test_brute_force_oracles(rng, k, c):
    n = 200
    members = _random_members(rng, k, c, n)
    mean = ensemble_mean(members)
    h = predictive_entropy(mean)
    mi = mutual_information(members)
    ep = epkl(members)
    for j in range(n):
        pixel = [m[:, 0, j].astype(np.float64) for m in members]
        pbar = np.mean(pixel, axis=0)
        h_ref = _entropy_loop(pbar)
        mi_ref = h_ref - np.mean([_entropy_loop(p) for p in pixel])
        kl_sum = 0.0
        for i in range(k):
            for l in range(k):
                if i == l:
                    continue
                kl_sum += sum(
                    pi * (math.log(max(pi, EPS)) - math.log(max(qi, EPS)))
                    for pi, qi in zip(pixel[i], pixel[l])
                )
        ep_ref = kl_sum / (k * (k - 1))
        assert abs(h[0, j] - h_ref) < 1e-6
        assert abs(mi[0, j] - mi_ref) < 1e-6
        assert abs(ep[0, j] - ep_ref) < 1e-6


def test_compute_map_dispatch(rng):
    members = _random_members(rng, 3, 4, 10)
    assert np.array_equal(
        uncertainty.compute_map(members, "entropy"),
        predictive_entropy(ensemble_mean(members)),
    )
    assert np.array_equal(
        uncertainty.compute_map(members, "mutual_information"),
        mutual_information(members),
    )
    assert np.array_equal(uncertainty.compute_map(members, "epkl"), epkl(members))
    with pytest.raises(ValueError):
        uncertainty.compute_map(members, "nope")
