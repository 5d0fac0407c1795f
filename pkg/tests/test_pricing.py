import numpy as np
import pytest
import scipy.optimize
import scipy.special

from tjap import mnl, pricing
from tjap.pricing import (CurveTable, GridUtility, LinearUtility,
                          brute_force_joint_oracle, envelope,
                          fixed_point_revenue, make_price_grid,
                          optimal_assortment_and_prices,
                          single_item_optimal_price)

W1 = float(scipy.special.lambertw(1.0).real)  # Omega constant


def envelope_slow(bar_v, grid, l0):
    """O(G^2) reference: explicit min over j <= k of the shifted values."""
    shifted = bar_v + l0 * grid
    out = np.empty(grid.size)
    for k in range(grid.size):
        out[k] = shifted[: k + 1].min() - l0 * grid[k]
    return out


def test_make_price_grid():
    g = make_price_grid(2.0, 5)
    np.testing.assert_allclose(g, [0.0, 0.5, 1.0, 1.5, 2.0])
    with pytest.raises(ValueError):
        make_price_grid(0.0)
    with pytest.raises(ValueError):
        make_price_grid(1.0, 1)


def test_linear_utility_phi_closed_form():
    c = LinearUtility(1.0, 1.0)
    phi, p = c.phi_and_price(0.5, 10.0)
    # stationary point mu + 1/slope
    assert p == pytest.approx(1.5)
    assert phi == pytest.approx(np.exp(-0.5))
    # cap binds when mu + 1/slope > pbar
    phi, p = c.phi_and_price(9.8, 10.0)
    assert p == 10.0
    with pytest.raises(ValueError):
        LinearUtility(0.0, 0.0)


def test_linear_phi_matches_dense_grid():
    rng = np.random.default_rng(2)
    grid = np.linspace(0.0, 6.0, 60_001)
    for _ in range(20):
        c = LinearUtility(rng.uniform(-1, 2), rng.uniform(0.3, 2.0))
        mu = rng.uniform(0.0, 3.0)
        ref = np.max((grid - mu) * np.exp(c.eval(grid)))
        phi, _ = c.phi_and_price(mu, 6.0)
        assert phi == pytest.approx(ref, rel=1e-6, abs=1e-9)


def test_grid_utility_phi_matches_dense_argmax():
    rng = np.random.default_rng(3)
    grid = np.linspace(0.0, 4.0, 257)
    for _ in range(20):
        # random nonincreasing curve
        v = -np.cumsum(rng.uniform(0.0, 0.1, size=grid.size))
        c = GridUtility(grid, v)
        mu = rng.uniform(0.0, 2.0)
        fine = np.linspace(0.0, 4.0, 40_001)
        ref = np.max((fine - mu) * np.exp(c.eval(fine)))
        phi, _ = c.phi_and_price(mu, 4.0)
        # refinement may beat the dense grid slightly, never trail it
        assert phi >= ref - 1e-9
        assert phi == pytest.approx(ref, rel=1e-3, abs=1e-8)
    with pytest.raises(ValueError):
        GridUtility(grid, v[:-1])


def test_check_curve():
    grid = np.linspace(0.0, 2.0, 51)
    assert pricing.check_curve(LinearUtility(1.0, 0.5), grid, l_max=0.5)
    assert not pricing.check_curve(LinearUtility(1.0, 2.0), grid, l_max=0.5)
    increasing = GridUtility(grid, grid.copy())
    assert not pricing.check_curve(increasing, grid, l_max=10.0)


def test_envelope_matches_quadratic_reference():
    rng = np.random.default_rng(4)
    for _ in range(50):
        size = rng.integers(2, 40)
        grid = np.sort(rng.uniform(0.0, 5.0, size=size))
        bar_v = rng.normal(size=size)
        l0 = rng.uniform(0.0, 2.0)
        got = envelope(bar_v, grid, l0)
        np.testing.assert_array_equal(got, envelope_slow(bar_v, grid, l0))


def test_envelope_properties():
    rng = np.random.default_rng(5)
    grid = np.linspace(0.0, 3.0, 97)
    for _ in range(30):
        bar_v = rng.normal(size=grid.size)
        l0 = rng.uniform(0.1, 1.5)
        v = envelope(bar_v, grid, l0)
        # below the input, and drops at least l0 per unit price
        assert np.all(v <= bar_v + 1e-12)
        assert np.all(np.diff(v) <= -l0 * np.diff(grid) + 1e-9)
        # idempotent
        np.testing.assert_allclose(envelope(v, grid, l0), v, atol=1e-12)
    # a curve already steep enough passes through unchanged
    steep = 5.0 - 2.0 * grid
    np.testing.assert_allclose(envelope(steep, grid, 1.0), steep)


def test_envelope_batch_matches_rows():
    rng = np.random.default_rng(6)
    grid = np.linspace(0.0, 2.0, 33)
    batch = rng.normal(size=(7, grid.size))
    out = envelope(batch, grid, 0.7)
    for i in range(7):
        np.testing.assert_array_equal(out[i], envelope(batch[i], grid, 0.7))
    with pytest.raises(ValueError):
        envelope(batch[:, :-1], grid, 0.7)
    with pytest.raises(ValueError):
        envelope(batch, grid, -0.1)


def test_single_item_price_lambert_closed_form():
    # for utility 1 - p the optimum is p = 1 + W(1), revenue = W(1)
    p, rev = single_item_optimal_price(1.0, 1.0, pbar=10.0)
    assert p == pytest.approx(1.0 + W1, abs=1e-9)
    assert rev == pytest.approx(W1, abs=1e-9)


def test_single_item_price_matches_scipy():
    rng = np.random.default_rng(7)
    for _ in range(25):
        b = rng.uniform(-1.0, 3.0)
        g = rng.uniform(0.3, 2.0)

        def neg_rev(p):
            return -p / (1.0 + np.exp(-(b - g * p)))

        ref = scipy.optimize.minimize_scalar(neg_rev, bounds=(0.0, 50.0),
                                             method="bounded",
                                             options={"xatol": 1e-10})
        p, rev = single_item_optimal_price(b, g, pbar=50.0)
        assert p == pytest.approx(ref.x, abs=1e-6)
        assert rev == pytest.approx(-ref.fun, abs=1e-9)


def test_single_item_price_cap_binds():
    p, rev = single_item_optimal_price(5.0, 0.2, pbar=2.0)
    assert p == 2.0
    assert rev == pytest.approx(2.0 / (1.0 + np.exp(-(5.0 - 0.4))))
    with pytest.raises(ValueError):
        single_item_optimal_price(1.0, 0.0, pbar=2.0)
    with pytest.raises(ValueError):
        single_item_optimal_price(1.0, 1.0, pbar=0.0)


def test_fixed_point_single_item_equals_lambert_value():
    mu, prices = fixed_point_revenue([LinearUtility(1.0, 1.0)], pbar=10.0)
    assert mu == pytest.approx(W1, abs=1e-6)
    assert prices[0] == pytest.approx(1.0 + W1, abs=1e-6)


def test_fixed_point_identical_items_closed_form():
    # K identical items with utility 1 - p: mu solves K e^{-mu} = mu,
    # i.e. mu = W(K); every price is mu + 1.
    for k in (2, 3, 5):
        curves = [LinearUtility(1.0, 1.0) for _ in range(k)]
        mu, prices = fixed_point_revenue(curves, pbar=12.0)
        ref = float(scipy.special.lambertw(float(k)).real)
        assert mu == pytest.approx(ref, abs=1e-6)
        np.testing.assert_allclose(prices, ref + 1.0, atol=1e-5)


def test_fixed_point_consistency_with_expected_revenue():
    # the returned value is attained by the returned prices
    rng = np.random.default_rng(8)
    for _ in range(10):
        curves = [LinearUtility(rng.uniform(-0.5, 1.5), rng.uniform(0.4, 1.5))
                  for _ in range(4)]
        mu, prices = fixed_point_revenue(curves, pbar=8.0)
        v = np.array([c.eval(p) for c, p in zip(curves, prices)])
        assert mnl.expected_revenue(prices, v) == pytest.approx(mu, abs=1e-5)


def test_fixed_point_empty():
    mu, p = fixed_point_revenue([], pbar=2.0)
    assert mu == 0.0 and p.size == 0
    mu, p = fixed_point_revenue(CurveTable(np.linspace(0, 1, 4), np.zeros((0, 4))),
                                pbar=2.0)
    assert mu == 0.0 and p.size == 0


def test_optimal_assortment_identical_items():
    curves = [LinearUtility(1.0, 1.0) for _ in range(6)]
    out = optimal_assortment_and_prices(curves, k=2, pbar=12.0)
    ref = float(scipy.special.lambertw(2.0).real)
    assert out.value == pytest.approx(ref, abs=1e-6)
    assert out.items.size == 2
    np.testing.assert_allclose(out.prices, ref + 1.0, atol=1e-5)
    # k >= n keeps every item when all phi are positive
    out = optimal_assortment_and_prices(curves[:3], k=8, pbar=12.0)
    np.testing.assert_array_equal(out.items, [0, 1, 2])


def test_optimal_assortment_prefers_strong_items():
    curves = [LinearUtility(-3.0, 1.0), LinearUtility(2.0, 1.0),
              LinearUtility(-3.0, 1.0), LinearUtility(1.9, 1.0)]
    out = optimal_assortment_and_prices(curves, k=2, pbar=12.0)
    np.testing.assert_array_equal(out.items, [1, 3])
    with pytest.raises(ValueError):
        optimal_assortment_and_prices(curves, k=0, pbar=12.0)


def test_optimal_assortment_vs_brute_force_small():
    rng = np.random.default_rng(9)
    pbar = 5.0
    for trial in range(12):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, 4))
        curves = [LinearUtility(rng.uniform(-1.0, 2.0), rng.uniform(0.4, 1.6))
                  for _ in range(n)]
        ref_val, _, _ = brute_force_joint_oracle(curves, k, pbar, step=0.01)
        out = optimal_assortment_and_prices(curves, k, pbar)
        assert out.value >= ref_val - 5e-3
        assert out.value == pytest.approx(ref_val, rel=2e-3, abs=5e-3)


def test_optimal_assortment_curve_table_matches_lists():
    rng = np.random.default_rng(10)
    grid = make_price_grid(5.0, 513)
    vals = np.stack([LinearUtility(b, g).eval(grid)
                     for b, g in rng.uniform(0.5, 1.5, size=(4, 2))])
    table = CurveTable(grid, vals)
    as_list = [GridUtility(grid, v) for v in vals]
    a = optimal_assortment_and_prices(table, k=2, pbar=5.0)
    b = optimal_assortment_and_prices(as_list, k=2, pbar=5.0)
    np.testing.assert_array_equal(a.items, b.items)
    np.testing.assert_allclose(a.prices, b.prices, atol=1e-9)
    assert a.value == pytest.approx(b.value, abs=1e-9)


def test_brute_force_validates():
    curves = [LinearUtility(1.0, 1.0) for _ in range(9)]
    with pytest.raises(ValueError):
        brute_force_joint_oracle(curves, k=2, pbar=2.0)
    with pytest.raises(ValueError):
        brute_force_joint_oracle(curves[:2], k=0, pbar=2.0)


def test_brute_force_single_item_matches_closed_form():
    val, items, prices = brute_force_joint_oracle([LinearUtility(1.0, 1.0)],
                                                  k=1, pbar=10.0, step=0.002)
    assert val == pytest.approx(W1, abs=1e-5)
    np.testing.assert_array_equal(items, [0])
    assert prices[0] == pytest.approx(1.0 + W1, abs=5e-3)
