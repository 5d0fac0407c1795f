import math

import numpy as np
import pytest
import scipy.special

from tjap import mnl


def test_augment_feature_single():
    x = np.array([1.0, 2.0, -0.5])
    f = mnl.augment_feature(x, 3.0)
    np.testing.assert_allclose(f, [1.0, 2.0, -0.5, -3.0, -6.0, 1.5])


def test_augment_feature_batch_broadcast():
    x = np.arange(12.0).reshape(4, 3)
    p = np.array([0.0, 1.0, 2.0, 3.0])
    f = mnl.augment_feature(x, p)
    assert f.shape == (4, 6)
    np.testing.assert_allclose(f[:, :3], x)
    np.testing.assert_allclose(f[:, 3:], -p[:, None] * x)


def test_choice_probabilities_hand_value():
    # one item with utility 0 splits evenly with the outside option
    np.testing.assert_allclose(mnl.choice_probabilities([0.0]), [0.5, 0.5])
    # two items, hand-computed softmax against utility-0 outside
    q = mnl.choice_probabilities([1.0, -1.0])
    denom = 1.0 + math.e + 1.0 / math.e
    np.testing.assert_allclose(q, [math.e / denom, 1.0 / (math.e * denom),
                                   1.0 / denom])


def test_choice_probabilities_sum_and_order():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(scale=3.0, size=rng.integers(1, 9))
        q = mnl.choice_probabilities(v)
        assert q.shape == (v.size + 1,)
        assert abs(q.sum() - 1.0) < 1e-12
        assert np.all(q > 0)
        # item probabilities are monotone in utility
        order = np.argsort(v)
        assert np.all(np.diff(q[:-1][order]) >= -1e-15)


def test_choice_probabilities_clamp_no_overflow():
    q = mnl.choice_probabilities([1e6, -1e6])
    assert np.isfinite(q).all()
    assert q[0] > 1.0 - 1e-10
    assert q[1] < 1e-10


def test_choice_probabilities_rejects_matrix():
    with pytest.raises(ValueError):
        mnl.choice_probabilities(np.zeros((2, 2)))


def test_sample_choice_frequencies():
    rng = np.random.default_rng(7)
    q = mnl.choice_probabilities([0.4, -0.3, 1.1])
    counts = np.zeros(4)
    n = 100_000
    for _ in range(n):
        counts[mnl.sample_choice(q, rng)] += 1
    np.testing.assert_allclose(counts / n, q, atol=0.01)


def test_sample_choice_validates():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        mnl.sample_choice(np.array([0.7, 0.7]), rng)
    with pytest.raises(ValueError):
        mnl.sample_choice(np.array([]), rng)


def test_choice_from_uniform_matches_cdf_buckets():
    q = np.array([0.2, 0.5, 0.3])
    assert mnl.choice_from_uniform(q, 0.0) == 0
    assert mnl.choice_from_uniform(q, 0.19999) == 0
    assert mnl.choice_from_uniform(q, 0.2) == 1
    assert mnl.choice_from_uniform(q, 0.69999) == 1
    assert mnl.choice_from_uniform(q, 0.7) == 2
    assert mnl.choice_from_uniform(q, 0.999999) == 2


def test_choice_from_uniform_agrees_with_sampling_distribution():
    # pushing iid uniforms through the inverse CDF reproduces the pmf
    rng = np.random.default_rng(3)
    q = mnl.choice_probabilities([0.3, -0.8, 0.9, 0.1])
    us = rng.random(100_000)
    idx = np.array([mnl.choice_from_uniform(q, u) for u in us])
    freq = np.bincount(idx, minlength=q.size) / us.size
    np.testing.assert_allclose(freq, q, atol=0.01)


def test_choice_from_uniform_rejects_bad_u():
    q = np.array([0.5, 0.5])
    for u in (-0.01, 1.0, 1.5):
        with pytest.raises(ValueError):
            mnl.choice_from_uniform(q, u)


def test_expected_revenue_hand_value():
    # single item, utility 0, price 2: revenue = 2 * 0.5
    assert mnl.expected_revenue([2.0], [0.0]) == pytest.approx(1.0)
    # empty assortment earns nothing
    assert mnl.expected_revenue([], []) == 0.0


def test_expected_revenue_matches_direct_sum():
    rng = np.random.default_rng(11)
    for _ in range(25):
        k = rng.integers(1, 6)
        p = rng.uniform(0, 5, size=k)
        v = rng.normal(size=k)
        q = mnl.choice_probabilities(v)[:-1]
        assert mnl.expected_revenue(p, v) == pytest.approx(float(p @ q))


def test_lambert_w_against_scipy():
    for z in [0.0, 1e-9, 0.1, 0.5, 1.0, np.e, 10.0, 1e3, 1e8, 1e16]:
        ref = float(scipy.special.lambertw(z).real)
        assert mnl.lambert_w(z) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_lambert_w_defining_equation():
    rng = np.random.default_rng(5)
    for _ in range(100):
        z = float(np.exp(rng.uniform(-20, 20)))
        w = mnl.lambert_w(z)
        assert w * math.exp(w) == pytest.approx(z, rel=1e-8)
    with pytest.raises(ValueError):
        mnl.lambert_w(-1.0)


def test_price_cap_formula_and_monotonicity():
    cap = mnl.price_cap(4, 2.0, 0.5)
    ref = (float(scipy.special.lambertw(4 * math.exp(2.0)).real) + 1.0) / 0.5
    assert cap == pytest.approx(ref, rel=1e-9)
    # cap grows with assortment size and utility bound, shrinks with l0
    assert mnl.price_cap(8, 2.0, 0.5) > cap
    assert mnl.price_cap(4, 3.0, 0.5) > cap
    assert mnl.price_cap(4, 2.0, 1.0) < cap


def test_price_cap_is_a_valid_cap():
    # the optimal single-item price never exceeds the cap
    rng = np.random.default_rng(13)
    for _ in range(50):
        u0 = rng.uniform(-1.0, 2.0)
        slope = rng.uniform(0.5, 2.0)
        cap = mnl.price_cap(1, 2.0, 0.5)
        grid = np.linspace(0, 3 * cap, 4001)
        rev = np.array([p * mnl.choice_probabilities([u0 - slope * p])[0]
                        for p in grid])
        assert grid[int(np.argmax(rev))] <= cap + 1e-6
