"""Information geometry for the episodic learner.

Per-round Fisher increments of the MNL log-likelihood, pooled
cross-market information with covariate-shift weights, the smallest
eigenvalue routine used by the identifiability gate, and the gate and
forced-exploration-window formulas themselves.
"""

import numpy as np

from .errors import ConvergenceError
from .mnl import UTILITY_CLAMP


def fisher_increment(feats, nu):
    """Expected information of one offered assortment at parameter nu.

    With choice probabilities q over the offered items,
        I = sum_i q_i xt_i xt_i' - (sum_i q_i xt_i)(sum_j q_j xt_j)',
    which is the covariance of the chosen (augmented) feature and hence
    PSD.  `feats` is (|S|, 2d); an empty assortment contributes zero.
    """
    feats = np.asarray(feats, dtype=float)
    nu = np.asarray(nu, dtype=float)
    dim = nu.size
    if feats.size == 0:
        return np.zeros((dim, dim))
    w = np.exp(np.clip(feats @ nu, -UTILITY_CLAMP, UTILITY_CLAMP))
    q = w / (1.0 + w.sum())
    m = (feats * q[:, None]).T @ feats - np.outer(q @ feats, q @ feats)
    return 0.5 * (m + m.T)


def pool_geometry(v_target, v_sources, weights):
    """Pooled information W = V_target + sum_h omega_h V_source_h."""
    v_target = np.asarray(v_target, dtype=float)
    out = v_target.copy()
    weights = list(weights)
    v_sources = list(v_sources)
    if len(weights) != len(v_sources):
        raise ValueError("pool_geometry: one weight per source required")
    for w, v in zip(weights, v_sources):
        if w < 0:
            raise ValueError("pool_geometry: weights must be nonnegative")
        out += w * np.asarray(v, dtype=float)
    return out


def market_weight(chi_sq):
    """Downweighting omega = 1 / (1 + chi^2) for a source market."""
    if chi_sq < 0:
        raise ValueError("market_weight: chi_sq must be >= 0")
    return 1.0 / (1.0 + chi_sq)


def estimate_chi_squared(target_x, source_x, n_bins=16):
    """Binned chi-squared divergence between covariate samples.

    Histograms each coordinate on 16 equal-width bins over [0, 1] with
    add-one smoothing and averages chi^2(target || source) over
    coordinates.  Inputs are (n, d) arrays with entries in [0, 1].
    """
    target_x = np.atleast_2d(np.asarray(target_x, dtype=float))
    source_x = np.atleast_2d(np.asarray(source_x, dtype=float))
    if target_x.shape[1] != source_x.shape[1]:
        raise ValueError("estimate_chi_squared: coordinate count mismatch")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    total = 0.0
    d = target_x.shape[1]
    for j in range(d):
        ct = np.histogram(target_x[:, j], bins=edges)[0] + 1.0
        cs = np.histogram(source_x[:, j], bins=edges)[0] + 1.0
        pt = ct / ct.sum()
        ps = cs / cs.sum()
        total += np.sum((pt - ps) ** 2 / ps)
    return total / d


# ---------------------------------------------------------------------------
# smallest eigenvalue (cyclic Jacobi)
# ---------------------------------------------------------------------------

def min_eigenvalue(matrix, tol=1e-10, max_sweeps=100):
    """Smallest eigenvalue of a symmetric matrix by cyclic Jacobi
    rotations, iterated until the off-diagonal Frobenius norm falls
    below tol (relative to the matrix scale)."""
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("min_eigenvalue: need a square matrix")
    if np.max(np.abs(a - a.T)) > 1e-8 * max(1.0, np.max(np.abs(a))):
        raise ValueError("min_eigenvalue: matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    scale = max(1.0, np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            return float(np.min(np.diag(a)))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e10:
                    t = 1.0 / (2.0 * theta)  # avoids theta^2 overflow
                elif theta != 0.0:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                else:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                # exact rotation targets, cheaper than trusting roundoff
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
    raise ConvergenceError("min_eigenvalue: Jacobi sweeps did not converge")


# ---------------------------------------------------------------------------
# identifiability gate
# ---------------------------------------------------------------------------

def gate_is_open(v_target, q_prev, kappa, k_offer, c_tilde_min, rounds_left):
    """Forced exploration fires only in the terminal window of an
    episode (rounds_left <= q_prev) and only while the target
    information matrix is still thin:

        lambda_min(V_target) <= kappa^2 k_offer q_prev c_tilde_min / 2.
    """
    if rounds_left > q_prev:
        return False
    threshold = kappa ** 2 * k_offer * q_prev * c_tilde_min / 2.0
    return min_eigenvalue(v_target) <= threshold


def forced_exploration_length(lambda_target, kappa, k_offer, c_tilde_min,
                              d, pbar, eta_gate):
    """Window length that guarantees lambda_min(V_target) >= lambda_target
    after uniform forced exploration, with failure probability eta_gate:

        q = ceil(max{ 2 Lambda / mu,  (8 K d (1 + pbar^2) / mu) log(2d/eta) })

    with mu = kappa^2 k_offer c_tilde_min (matrix-Chernoff constants).
    """
    if min(kappa, c_tilde_min, eta_gate) <= 0 or k_offer < 1 or d < 1:
        raise ValueError("forced_exploration_length: bad constants")
    mu = kappa ** 2 * k_offer * c_tilde_min
    b1 = 2.0 * lambda_target / mu
    b2 = 8.0 * k_offer * d * (1.0 + pbar ** 2) / mu * np.log(2.0 * d / eta_gate)
    return max(int(np.ceil(max(b1, b2))), 0)
