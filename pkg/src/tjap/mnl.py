"""Multinomial-logit demand primitives.

Conventions used across the package:
  * a product with context x in R^d and price p has systematic utility
    <x, theta> - p * <x, gamma>, which is linear in the augmented feature
    (x, -p x) in R^{2d};
  * the outside option has utility 0 and is always available;
  * probability vectors over an assortment S list the |S| item
    probabilities first and the outside probability last.
"""

import numpy as np

# Systematic utilities are clamped to this symmetric range before
# exponentiation so optimistic bonuses can never overflow exp().
UTILITY_CLAMP = 40.0


def augment_feature(x, price):
    """Return the augmented feature (x, -price * x) in R^{2d}.

    `x` may be a single vector (d,) or a batch (..., d); `price` is a
    scalar or an array broadcasting against the leading shape.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(price, dtype=float)
    px = p[..., None] * x if p.ndim else p * x
    return np.concatenate([np.broadcast_to(x, px.shape), -px], axis=-1)


def clamp_utilities(v):
    return np.clip(v, -UTILITY_CLAMP, UTILITY_CLAMP)


def choice_probabilities(utilities):
    """MNL choice probabilities over S union {outside}.

    Input: systematic utilities of the offered items, shape (n,).
    Output: shape (n + 1,), items first, outside option last.  The
    outside option has utility zero, so the output sums to one by
    construction.  Utilities are clamped to +-UTILITY_CLAMP first.
    """
    v = np.asarray(utilities, dtype=float)
    if v.ndim != 1:
        raise ValueError("utilities must be a 1-d array")
    w = np.exp(clamp_utilities(v))
    denom = 1.0 + w.sum()
    return np.concatenate([w, [1.0]]) / denom


def sample_choice(probabilities, rng):
    """Draw one index from a probability vector (last slot = outside)."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must be a non-empty 1-d array")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("probabilities must be nonnegative and sum to 1")
    return int(rng.choice(p.size, p=p / p.sum()))


def choice_from_uniform(probabilities, u):
    """Index of the choice whose CDF bucket contains u in [0, 1).

    Inverse-CDF sampling so one shared uniform draw can be replayed
    against different choice distributions (common random numbers
    across policies facing the same customer).
    """
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must be a non-empty 1-d array")
    if not (0.0 <= u < 1.0):
        raise ValueError("u must lie in [0, 1)")
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"),
                   p.size - 1))


def expected_revenue(prices, utilities):
    """Expected revenue sum_i p_i q_i(S, p) of an offered assortment."""
    p = np.asarray(prices, dtype=float)
    v = np.asarray(utilities, dtype=float)
    if p.shape != v.shape:
        raise ValueError("prices and utilities must have matching shapes")
    if p.size == 0:
        return 0.0
    q = choice_probabilities(v)[:-1]
    return float(p @ q)


# ---------------------------------------------------------------------------
# price cap
# ---------------------------------------------------------------------------

def lambert_w(z, tol=1e-10, max_iter=100):
    """Principal branch of w * exp(w) = z for z >= 0, by Newton iteration.

    Converges quadratically from the log-based seed; we stop when the
    step size drops below `tol` (residual then sits near machine
    precision relative to z).
    """
    if z < 0:
        raise ValueError("lambert_w: need z >= 0 on the principal branch")
    if z == 0.0:
        return 0.0
    # seed: w ~ log(z) - log(log(z)) for large z, w ~ z near 0
    w = np.log1p(z) if z < np.e else np.log(z) - np.log(np.log(z))
    for _ in range(max_iter):
        ew = np.exp(w)
        step = (w * ew - z) / (ew * (1.0 + w))
        w -= step
        if abs(step) <= tol * max(1.0, abs(w)):
            return float(w)
    raise RuntimeError("lambert_w: Newton failed to converge")


def price_cap(n_offer, utility_bound, l0):
    """Upper bound on any revenue-optimal price.

    With at most `n_offer` items offered, zero-price utilities at most
    `utility_bound`, and price sensitivity at least `l0`, no optimal
    price exceeds W(n_offer * exp(utility_bound)) / l0 + 1 / l0, where W
    is the Lambert function.  Prices are searched on [0, price_cap].
    """
    if n_offer < 1:
        raise ValueError("price_cap: need n_offer >= 1")
    if l0 <= 0:
        raise ValueError("price_cap: need l0 > 0")
    z = n_offer * np.exp(min(utility_bound, UTILITY_CLAMP))
    return (lambert_w(z) + 1.0) / l0
