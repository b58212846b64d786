import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from icdc.errors import EmptyGrid, NumericallyDegenerate
from icdc.losses import (
    DomainPair, HeatmapSamples, ReliabilityInputs, adapted_global_loss, ap_approx, ap_kappa_loss,
    bin_centers, cosim_loss, global_loss, peakiness_loss, sample_negative_anchors,
)

unit_vec = st.lists(st.floats(0, 1), min_size=2, max_size=30)


def pair_strategy():
    return st.integers(2, 30).flatmap(lambda n: st.tuples(
        st.lists(st.floats(0, 1), min_size=n, max_size=n),
        st.lists(st.floats(0, 1), min_size=n, max_size=n)))


def test_cosim_examples():
    s = np.array([0.2, 0.5, 0.9])
    assert cosim_loss(s, s).value == pytest.approx(0.0, abs=1e-15)
    assert cosim_loss([1.0, 0.0], [0.0, 1.0]).value == 1.0
    assert cosim_loss(HeatmapSamples(s, s)).value == pytest.approx(0.0, abs=1e-15)


def test_cosim_zero_vector():
    with pytest.raises(NumericallyDegenerate):
        cosim_loss([0.0, 0.0], [0.3, 0.1])
    with pytest.raises(NumericallyDegenerate):
        cosim_loss([0.3, 0.1], [0.0, 0.0])


@given(pair_strategy(), st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosim_range_and_scale_invariance(v, a, b):
    s, sp = np.array(v[0]), np.array(v[1])
    assume(np.linalg.norm(s) > 1e-3 and np.linalg.norm(sp) > 1e-3)
    val = cosim_loss(s, sp).value
    assert 0.0 <= val <= 2.0
    assert cosim_loss(a * s, b * sp).value == pytest.approx(val, abs=1e-12)
    assert cosim_loss(s, a * s).value == pytest.approx(0.0, abs=1e-12)


def test_cosim_signed_range():
    # outside the heatmap contract, opposite vectors reach the upper end
    assert cosim_loss([1.0, 2.0], [-1.0, -2.0]).value == pytest.approx(2.0)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_close(a, b, tol=1e-5):
    return np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_cosim_gradients(seed):
    rng = np.random.default_rng(seed)
    s, sp = rng.uniform(0.05, 1, 12), rng.uniform(0.05, 1, 12)
    res = cosim_loss(s, sp)
    assert rel_close(res.grad_s, central_diff(lambda x: cosim_loss(x, sp).value, s))
    assert rel_close(res.grad_s_prime, central_diff(lambda x: cosim_loss(s, x).value, sp))


@given(st.integers(0, 10_000), st.floats(0, 1))
@settings(max_examples=30)
def test_ap_kappa_gradients(seed, kappa):
    rng = np.random.default_rng(seed)
    ap, r = rng.uniform(0.05, 0.95, 9), rng.uniform(0.05, 0.95, 9)
    res = ap_kappa_loss(ReliabilityInputs(ap, r, kappa))
    assert rel_close(res.grad_ap, central_diff(lambda x: ap_kappa_loss(ReliabilityInputs(x, r, kappa)).mean, ap))
    assert rel_close(res.grad_r, central_diff(lambda x: ap_kappa_loss(ReliabilityInputs(ap, x, kappa)).mean, r))


def test_ap_kappa_examples():
    ap = np.array([0.1, 0.5, 0.9])
    np.testing.assert_array_equal(ap_kappa_loss(ReliabilityInputs(ap, np.ones(3))).per_point, 1.0 - ap)
    np.testing.assert_array_equal(ap_kappa_loss(ReliabilityInputs(ap, np.zeros(3), 0.3)).per_point,
                                  np.full(3, 1.0 - 0.3))
    one = ap_kappa_loss(ReliabilityInputs([0.8], [0.6], 0.5))
    assert one.per_point[0] == pytest.approx(0.32, abs=1e-15)
    assert one.mean == pytest.approx(0.32, abs=1e-15)


def test_reliability_inputs_validated():
    with pytest.raises(ValueError):
        ReliabilityInputs([1.2], [0.5])
    with pytest.raises(ValueError):
        ReliabilityInputs([0.2, 0.3], [0.5])
    with pytest.raises(ValueError):
        ReliabilityInputs([0.2], [0.5], kappa=2.0)
    with pytest.raises(ValueError):
        HeatmapSamples([], [])


def test_peakiness_examples():
    assert peakiness_loss(np.full((8, 8), 0.3), 4) == pytest.approx(1.0)
    g = np.zeros((4, 4))
    g[1, 2] = 1.0
    assert peakiness_loss(g, 4) == pytest.approx(0.0625, abs=1e-15)
    # a trailing partial patch is ignored
    g2 = np.zeros((5, 6))
    g2[1, 2] = 1.0
    g2[4, 5] = 1.0
    assert peakiness_loss(g2, 4) == pytest.approx(0.0625, abs=1e-15)
    with pytest.raises(EmptyGrid):
        peakiness_loss(np.zeros((3, 3)), 4)


def exact_ap(pos, neg):
    return 1.0 / (1.0 + np.count_nonzero(np.asarray(neg) > pos))


def test_ap_extremes():
    width = bin_centers(25)[1] - bin_centers(25)[0]
    neg = np.linspace(-0.9, 0.2, 12)
    assert ap_approx(0.2 + 2 * width + 1e-9, neg) == 1.0
    low = ap_approx(-0.9 - 2 * width - 1e-9, neg)
    assert low == pytest.approx(1 / (len(neg) + 1), abs=1 / len(neg) - 1 / (len(neg) + 1))
    with pytest.raises(ValueError):
        ap_approx(0.5, [])


def test_ap_close_to_exact_on_random_rankings():
    rng = np.random.default_rng(0)
    for _ in range(25):
        neg = rng.uniform(-1, 1, rng.integers(5, 40))
        pos = rng.uniform(-1, 1)
        assert abs(ap_approx(pos, neg, bins=25) - exact_ap(pos, neg)) <= 0.1


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.floats(-1, 1), st.floats(-1, 1))
def test_ap_monotone_and_bounded(neg, a, b):
    lo, hi = min(a, b), max(a, b)
    va, vb = ap_approx(lo, neg), ap_approx(hi, neg)
    assert 0.0 <= va <= vb + 1e-12 <= 1.0 + 1e-12


def test_adapted_global_examples():
    same = adapted_global_loss(0.3, 0.2, DomainPair("A", "A"))
    assert same.value == pytest.approx(0.5) and same.rep_grad_open and same.reliability_grad_open
    cross = adapted_global_loss(0.3, 0.2, DomainPair("A", "B"))
    assert cross.value == 0.2 and not cross.rep_grad_open and not cross.reliability_grad_open
    for rep in np.linspace(0, 1, 101):
        assert adapted_global_loss(rep, 0.2, DomainPair("A", "B")).value == 0.2
    with pytest.raises(ValueError):
        adapted_global_loss(np.nan, 0.2, DomainPair("A", "A"))


@given(st.floats(0, 10), st.floats(0, 10))
def test_adapted_reduces_to_plain_sum_bitwise(rep, rel):
    assert adapted_global_loss(rep, rel, DomainPair(1, 1)).value == global_loss(rep, rel)


def test_negative_anchor_distance():
    rng = np.random.default_rng(0)
    cand = rng.uniform(0, 100, (500, 2))
    out = sample_negative_anchors(cand, [50.0, 50.0], 20, rng)
    assert len(out) == 20
    assert np.all(np.linalg.norm(out - [50, 50], axis=1) >= 8.0)
    few = sample_negative_anchors([[0.0, 0.0], [50.0, 52.0]], [50.0, 50.0], 5, rng)
    assert few.tolist() == [[0.0, 0.0]]
