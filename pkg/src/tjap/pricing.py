"""Joint assortment-and-pricing optimizer for MNL demand.

The optimizer works on per-item utility curves u_i(p).  Expected revenue
of (S, p) is sum_i p_i w_i / (1 + sum_j w_j) with w_i = exp(u_i(p_i)).
The optimal value mu* is the unique fixed point of

    Phi_S(mu) = sum_{i in S} phi_i(mu),   phi_i(mu) = sup_p (p - mu) w_i(p),

i.e. the unique zero of F(mu) = Phi_S(mu) - mu, which is strictly
decreasing with F(0) >= 0 and F(pbar) <= 0.  Optimal prices are the
per-item argmaxes at mu*, and the best assortment of size <= K keeps
the K largest phi_i(mu*).  We solve F = 0 by bisection; each phi is a
price-grid maximum refined by golden-section search in the winning
cell (closed form for linear curves).
"""

import itertools

import numpy as np
from dataclasses import dataclass

from .mnl import UTILITY_CLAMP, clamp_utilities, expected_revenue

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0  # golden ratio step


def make_price_grid(pbar, n_points=512):
    """Uniform price grid on [0, pbar] including both endpoints."""
    if pbar <= 0:
        raise ValueError("make_price_grid: need pbar > 0")
    if n_points < 2:
        raise ValueError("make_price_grid: need at least 2 points")
    return np.linspace(0.0, pbar, n_points)


# ---------------------------------------------------------------------------
# utility curves
# ---------------------------------------------------------------------------

class LinearUtility:
    """u(p) = intercept - slope * p with slope > 0."""

    __slots__ = ("intercept", "slope")

    def __init__(self, intercept, slope):
        if slope <= 0:
            raise ValueError("LinearUtility: need slope > 0")
        self.intercept = float(intercept)
        self.slope = float(slope)

    def eval(self, p):
        return self.intercept - self.slope * np.asarray(p, dtype=float)

    def phi_and_price(self, mu, pbar, grid=None):
        """sup_{p in [0, pbar]} (p - mu) exp(u(p)), closed form.

        The objective is unimodal with stationary point mu + 1/slope.
        """
        p = min(max(mu + 1.0 / self.slope, 0.0), pbar)
        phi = (p - mu) * np.exp(clamp_utilities(self.eval(p)))
        return float(phi), float(p)


class GridUtility:
    """Piecewise-linear utility curve tabulated on a shared price grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("GridUtility: grid and values must be matching 1-d arrays")
        self.grid = grid
        self.values = values

    def eval(self, p):
        return np.interp(p, self.grid, self.values)

    def phi_and_price(self, mu, pbar, grid=None):
        phi, p = _phi_grid_batch(mu, self.grid, self.values[None, :])
        return float(phi[0]), float(p[0])


def check_curve(curve, grid, l_max, tol=1e-9):
    """Spot-check that a curve is nonincreasing and l_max-Lipschitz on a grid."""
    v = np.asarray(curve.eval(grid), dtype=float)
    dv = np.diff(v)
    dp = np.diff(grid)
    if np.any(dv > tol):
        return False
    return not np.any(-dv > l_max * dp + tol)


# ---------------------------------------------------------------------------
# monotone Lipschitz envelope
# ---------------------------------------------------------------------------

def envelope(bar_v, grid, l0):
    """Tightest curve below bar_v that is nonincreasing and drops at
    least l0 per unit price:

        v~(p_k) = min_{j <= k} { bar_v(p_j) - l0 (p_k - p_j) }.

    Computed with a running minimum of bar_v(p_j) + l0 p_j, one forward
    pass.  `bar_v` may be (G,) or a batch (..., G) sharing `grid`.
    """
    bar_v = np.asarray(bar_v, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if bar_v.shape[-1] != grid.shape[0]:
        raise ValueError("envelope: last axis of bar_v must match grid")
    if l0 < 0:
        raise ValueError("envelope: need l0 >= 0")
    shifted = bar_v + l0 * grid
    return np.minimum.accumulate(shifted, axis=-1) - l0 * grid


# ---------------------------------------------------------------------------
# single-item pricing
# ---------------------------------------------------------------------------

def single_item_optimal_price(beta_i, gamma_i, pbar, tol=1e-12):
    """Optimal price and revenue for one item with utility beta_i - gamma_i p.

    Revenue p * q(p) with q = sigma(beta_i - gamma_i p) is unimodal; the
    interior optimum satisfies the first-order condition
    gamma_i * p * (1 - q(p)) = 1, whose left side is strictly increasing
    in p.  Bisection on that residual; the cap pbar binds when the
    residual is still negative there.
    """
    if gamma_i <= 0:
        raise ValueError("single_item_optimal_price: need gamma_i > 0")
    if pbar <= 0:
        raise ValueError("single_item_optimal_price: need pbar > 0")

    def q(p):
        return 1.0 / (1.0 + np.exp(-clamp_utilities(beta_i - gamma_i * p)))

    def foc(p):
        return gamma_i * p * (1.0 - q(p)) - 1.0

    if foc(pbar) < 0.0:
        p_star = pbar
    else:
        lo, hi = 0.0, pbar
        while hi - lo > tol * max(1.0, pbar):
            mid = 0.5 * (lo + hi)
            if foc(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        p_star = 0.5 * (lo + hi)
    return float(p_star), float(p_star * q(p_star))


# ---------------------------------------------------------------------------
# phi computations
# ---------------------------------------------------------------------------

def _golden_max_batch(f, lo, hi, n_iter=32):
    """Vectorized golden-section maximization on per-row brackets.

    Both probe points per iteration are evaluated in one stacked call
    to keep the numpy dispatch count down.
    """
    lo = lo.copy()
    hi = hi.copy()
    n = lo.size
    for _ in range(n_iter):
        h = hi - lo
        c = hi - _INVPHI * h
        d = lo + _INVPHI * h
        fcd = f(np.concatenate([c, d]))
        left = fcd[:n] >= fcd[n:]
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
    mid = 0.5 * (lo + hi)
    return f(mid), mid


def _interp_rows(grid, values, p):
    """Row-wise linear interpolation.

    values is (N, G); p holds one (or, stacked, several) probe price
    per row, so p.size must be a multiple of N.
    """
    idx = np.clip(np.searchsorted(grid, p), 1, grid.size - 1)
    x0 = grid[idx - 1]
    x1 = grid[idx]
    w = (p - x0) / (x1 - x0)
    rows = np.arange(p.size) % values.shape[0]
    return values[rows, idx - 1] * (1.0 - w) + values[rows, idx] * w


def _phi_grid_batch(mu, grid, values, expv=None):
    """(phi_i(mu), argmax price) for every row of a (N, G) value table.

    Grid maximum of (p - mu) exp(v) refined by golden-section search in
    the cell around the winning grid point.
    """
    if expv is None:
        expv = np.exp(clamp_utilities(values))
    gains = (grid - mu) * expv
    j = np.argmax(gains, axis=1)
    rows = np.arange(values.shape[0])
    lo = grid[np.maximum(j - 1, 0)]
    hi = grid[np.minimum(j + 1, grid.size - 1)]

    def f(p):
        return (p - mu) * np.exp(clamp_utilities(_interp_rows(grid, values, p)))

    phi_ref, p_ref = _golden_max_batch(f, lo, hi)
    phi_grid = gains[rows, j]
    p_grid = grid[j]
    better = phi_ref >= phi_grid
    return np.where(better, phi_ref, phi_grid), np.where(better, p_ref, p_grid)


def phi_item(mu, curve, grid):
    """phi_i(mu) = sup_{p in grid range} (p - mu) exp(u_i(p)).

    Grid maximum refined by golden-section search in the winning cell.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(curve.eval(grid), dtype=float)
    phi, _ = _phi_grid_batch(float(mu), grid, values[None, :])
    return float(phi[0])


class CurveTable:
    """Utility values for many items tabulated on one shared grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.size:
            raise ValueError("CurveTable: values must be (n_items, grid size)")

    def __len__(self):
        return self.values.shape[0]

    def row(self, i):
        return GridUtility(self.grid, self.values[i])


class _PhiEngine:
    """Batch phi evaluations for a collection of utility curves.

    Uses the closed form when every curve is linear, a shared value
    table when the curves live on one grid (GridUtility or CurveTable),
    and a per-curve fallback otherwise.  `refine=False` skips the
    golden-section polish, which is accurate enough while a bisection
    bracket is still wide.
    """

    def __init__(self, curves, pbar, grid):
        self.pbar = pbar
        self.grid = grid
        self.mode = "generic"
        if isinstance(curves, CurveTable):
            self.mode = "grid"
            self.grid = curves.grid
            self._values = curves.values
            self.n = len(curves)
        else:
            self.curves = list(curves)
            self.n = len(self.curves)
            if all(isinstance(c, LinearUtility) for c in self.curves):
                self.mode = "linear"
                self._b = np.array([c.intercept for c in self.curves])
                self._g = np.array([c.slope for c in self.curves])
            elif self.curves and all(isinstance(c, GridUtility) for c in self.curves):
                g0 = self.curves[0].grid
                if all(c.grid is g0 or np.array_equal(c.grid, g0) for c in self.curves):
                    self.mode = "grid"
                    self.grid = g0
                    self._values = np.stack([c.values for c in self.curves])
        if self.mode == "grid":
            self._expv = np.exp(clamp_utilities(self._values))
        elif self.mode == "generic" and grid is None:
            raise ValueError("phi: non-grid curves need an explicit price grid")

    def phi(self, mu, refine=True):
        """Per-item (phi_i(mu), price_i, weight_i) with weight = exp(u(price))."""
        if self.mode == "linear":
            p = np.clip(mu + 1.0 / self._g, 0.0, self.pbar)
            w = np.exp(clamp_utilities(self._b - self._g * p))
            return (p - mu) * w, p, w
        if self.mode == "grid":
            if refine:
                phi, p = _phi_grid_batch(mu, self.grid, self._values, self._expv)
                w = np.exp(clamp_utilities(_interp_rows(self.grid, self._values, p)))
                return phi, p, w
            gains = (self.grid - mu) * self._expv
            j = np.argmax(gains, axis=1)
            rows = np.arange(self._values.shape[0])
            return gains[rows, j], self.grid[j], self._expv[rows, j]
        pairs = [c.phi_and_price(mu, self.pbar, self.grid) for c in self.curves]
        phi = np.array([q[0] for q in pairs])
        p = np.array([q[1] for q in pairs])
        w = np.array([np.exp(clamp_utilities(np.asarray(c.eval(pi), dtype=float)))
                      for c, pi in zip(self.curves, p)])
        return phi, p, w


# ---------------------------------------------------------------------------
# fixed-point solves
# ---------------------------------------------------------------------------

@dataclass
class PricedAssortment:
    """Solver output: item indices (into the curve list), their prices,
    and the fixed-point revenue value."""
    items: np.ndarray
    prices: np.ndarray
    value: float


def _bisect_mu(phi_sum, pbar, tol):
    lo, hi = 0.0, float(pbar)
    # F(0) = Phi(0) >= 0 and F(pbar) = -pbar < 0 bracket the unique zero.
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if phi_sum(mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _polish_mu(engine, mu, subset, pbar, n_steps=2):
    """Newton steps on F(mu) = Phi(mu) - mu with refined phi values.

    F'(mu) = -(1 + sum_i w_i) by the envelope theorem, so each step is
    mu + F(mu) / (1 + sum w).  Cleans up the residual left by the
    grid-resolution bisection.
    """
    phi = p = w = None
    for _ in range(n_steps):
        phi, p, w = engine.phi(mu, refine=True)
        num = phi[subset].sum() if subset is not None else phi.sum()
        den = 1.0 + (w[subset].sum() if subset is not None else w.sum())
        mu = min(max(mu + (num - mu) / den, 0.0), pbar)
    return mu, phi, p


def fixed_point_revenue(curves, pbar, grid=None, tol=1e-7):
    """Optimal value and prices for a fixed assortment.

    Returns (mu_star, prices) where mu_star solves
    sum_i phi_i(mu) = mu and prices are the per-item argmaxes at
    mu_star.
    """
    if isinstance(curves, CurveTable):
        if len(curves) == 0:
            return 0.0, np.zeros(0)
    elif not curves:
        return 0.0, np.zeros(0)
    engine = _PhiEngine(curves, pbar, grid)
    mu = _bisect_mu(lambda m: engine.phi(m, refine=False)[0].sum(), pbar, tol)
    mu, _, prices = _polish_mu(engine, mu, None, pbar)
    return float(mu), prices


def optimal_assortment_and_prices(curves, k, pbar, grid=None, tol=1e-7):
    """Best assortment of size <= k with its optimal prices.

    Solves the fixed point of G(mu) = (sum of k largest phi_i(mu)) - mu,
    keeps the items with the k largest positive phi values (ties broken
    toward lower index), then polishes mu on the kept set.
    """
    if k < 1:
        raise ValueError("optimal_assortment_and_prices: need k >= 1")
    engine = _PhiEngine(curves, pbar, grid)
    if engine.n == 0:
        return PricedAssortment(np.zeros(0, dtype=int), np.zeros(0), 0.0)
    k = min(k, engine.n)

    def top_k_sum(m):
        phi = engine.phi(m, refine=False)[0]
        if phi.size <= k:
            return phi.sum()
        return np.sort(phi)[-k:].sum()

    mu = _bisect_mu(top_k_sum, pbar, tol)
    phi = engine.phi(mu, refine=True)[0]
    order = np.argsort(-phi, kind="stable")[:k]
    items = np.sort(order[phi[order] > 0.0])
    if items.size == 0:
        return PricedAssortment(items, np.zeros(0), 0.0)
    mu, _, prices = _polish_mu(engine, mu, items, pbar)
    return PricedAssortment(items, prices[items], float(mu))


# ---------------------------------------------------------------------------
# brute-force reference
# ---------------------------------------------------------------------------

def brute_force_joint_oracle(curves, k, pbar, step=0.005, max_items=8,
                             max_combos=40_000_000):
    """Exhaustive reference optimizer for small instances.

    Enumerates every assortment of size <= k.  For assortments small
    enough that the full price-grid product (step `step`) stays under
    `max_combos` the revenue is maximized exhaustively over the grid;
    larger assortments use per-item coordinate ascent on the same grid
    from 5 restart levels.  Intended for tests; refuses more than
    `max_items` items.
    """
    n = len(curves)
    if n > max_items:
        raise ValueError("brute_force_joint_oracle: too many items (n > %d)" % max_items)
    if k < 1:
        raise ValueError("brute_force_joint_oracle: need k >= 1")
    grid = np.arange(0.0, pbar + step / 2, step)
    weights = np.stack([np.exp(clamp_utilities(np.asarray(c.eval(grid), dtype=float)))
                        for c in curves])
    pw = grid * weights

    best = (0.0, (), np.zeros(0))
    for size in range(1, min(k, n) + 1):
        for subset in itertools.combinations(range(n), size):
            if grid.size ** size <= max_combos:
                value, idx = _exhaustive_price_search(weights, pw, grid, subset)
            else:
                value, idx = _coordinate_ascent(weights, pw, grid, subset)
            if value > best[0]:
                best = (value, subset, grid[list(idx)])
    return best[0], np.array(best[1], dtype=int), np.asarray(best[2])


def _exhaustive_price_search(weights, pw, grid, subset):
    """Max revenue over the full price-grid product for one assortment."""
    num = pw[subset[0]]
    den = 1.0 + weights[subset[0]]
    for i in subset[1:]:
        num = num[..., None] + pw[i]
        den = den[..., None] + weights[i]
    rev = num / den
    flat = int(np.argmax(rev))
    idx = np.unravel_index(flat, rev.shape)
    return float(rev[idx]), idx


def _coordinate_ascent(weights, pw, grid, subset, restarts=5, max_sweeps=60):
    """Per-item grid ascent to a coordinate-wise fixed point, restarted
    from 5 price levels spread over the grid."""
    best_val, best_idx = -np.inf, None
    starts = np.linspace(0, grid.size - 1, restarts).astype(int)
    for s in starts:
        idx = [int(s)] * len(subset)
        val = -np.inf
        for _ in range(max_sweeps):
            moved = False
            for pos, item in enumerate(subset):
                other_num = sum(pw[subset[j], idx[j]] for j in range(len(subset)) if j != pos)
                other_den = 1.0 + sum(weights[subset[j], idx[j]]
                                      for j in range(len(subset)) if j != pos)
                rev = (other_num + pw[item]) / (other_den + weights[item])
                j_best = int(np.argmax(rev))
                if j_best != idx[pos]:
                    idx[pos] = j_best
                    moved = True
                val = float(rev[j_best])
            if not moved:
                break
        if val > best_val:
            best_val, best_idx = val, tuple(idx)
    return best_val, best_idx
