"""Estimation for pooled MNL choice data.

Two-stage transfer estimator: a ridge-damped Newton MLE on pooled
source observations (aggregate stage) followed by an l1-penalized
correction fitted on target observations around that center (debias
stage).  The same Newton routine doubles as the plain target-only
estimator.  Episode-level tuning schedules (bonus radii, debias
penalty, failure budgets) live here too since they are tied to the
estimator's error bounds.
"""

import numpy as np
from dataclasses import dataclass

from .errors import ConvergenceError
from .mnl import UTILITY_CLAMP

PHI_SQ_FLOOR = 1e-3  # floor for the restricted-curvature proxy in beta_m


@dataclass
class Observation:
    """One logged round in one market.

    feats holds the augmented features (x_i, -p_i x_i) of the offered
    items, shape (|S|, 2d).  choice is the purchased row of feats, or
    -1 when the outside option was taken.
    """
    market: int
    t: int
    items: np.ndarray
    prices: np.ndarray
    feats: np.ndarray
    choice: int


@dataclass
class EstimationConfig:
    tol: float = 1e-5
    newton_max_iters: int = 100
    prox_max_iters: int = 5000
    lambda0: float = 1.0
    max_norm: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.tol <= 1e-3):
            raise ValueError("EstimationConfig: tol must lie in (0, 1e-3]")
        if self.lambda0 < 0:
            raise ValueError("EstimationConfig: lambda0 must be >= 0")


# ---------------------------------------------------------------------------
# packed data + likelihood pieces
# ---------------------------------------------------------------------------

class _Packed:
    """Observations padded to a common assortment size for vector math."""

    __slots__ = ("X", "mask", "choice", "n", "dim")

    def __init__(self, observations, dim=None):
        obs = list(observations)
        self.n = len(obs)
        if self.n == 0:
            raise ValueError("no observations")
        k_max = max(o.feats.shape[0] for o in obs) if obs else 0
        k_max = max(k_max, 1)
        self.dim = dim if dim is not None else obs[0].feats.shape[1]
        self.X = np.zeros((self.n, k_max, self.dim))
        self.mask = np.zeros((self.n, k_max), dtype=bool)
        self.choice = np.full(self.n, -1, dtype=int)
        for r, o in enumerate(obs):
            m = o.feats.shape[0]
            if m:
                self.X[r, :m] = o.feats
                self.mask[r, :m] = True
            self.choice[r] = o.choice


def _nll_grad(packed, nu, ridge=0.0):
    """Mean negative log-likelihood and its gradient.

    f(nu) = (1/n) sum_t [log(1 + sum_i exp(u_ti)) - u_t,choice]
            + ridge * ||nu||^2 / (2n).
    """
    U = packed.X @ nu
    w = np.where(packed.mask, np.exp(np.clip(U, -UTILITY_CLAMP, UTILITY_CLAMP)), 0.0)
    denom = 1.0 + w.sum(axis=1)
    q = w / denom[:, None]

    rows = np.arange(packed.n)
    bought = packed.choice >= 0
    u_chosen = np.where(bought, U[rows, np.maximum(packed.choice, 0)], 0.0)
    nll = np.log(denom) - u_chosen

    grad = np.einsum("nk,nki->i", q, packed.X)
    if bought.any():
        grad -= packed.X[rows[bought], packed.choice[bought]].sum(axis=0)
    f = nll.mean() + ridge * (nu @ nu) / (2.0 * packed.n)
    g = (grad + ridge * nu) / packed.n
    return float(f), g


def _mean_fisher(packed, nu, ridge=0.0):
    """Mean observed/expected information (they coincide for MNL)."""
    U = packed.X @ nu
    w = np.where(packed.mask, np.exp(np.clip(U, -UTILITY_CLAMP, UTILITY_CLAMP)), 0.0)
    q = w / (1.0 + w.sum(axis=1))[:, None]
    A = np.einsum("nk,nki,nkj->ij", q, packed.X, packed.X)
    G = np.einsum("nk,nki->ni", q, packed.X)
    F = (A - G.T @ G + ridge * np.eye(packed.dim)) / packed.n
    return 0.5 * (F + F.T)


def nll_and_gradient(observations, nu):
    """Mean NLL of a batch of observations at parameter nu (no ridge)."""
    nu = np.asarray(nu, dtype=float)
    return _nll_grad(_Packed(observations, dim=nu.size), nu)


# ---------------------------------------------------------------------------
# aggregate stage: ridge-damped Newton MLE
# ---------------------------------------------------------------------------

def aggregate_mle(observations, config=None, warm_start=None):
    """Pooled MLE over all supplied observations.

    Minimizes mean NLL + lambda0 ||nu||^2 / (2n) by damped Newton with
    the Fisher matrix as Hessian (exact for MNL) and Armijo
    backtracking, falling back to a gradient step if the Fisher solve
    is unusable.  The solution norm is clamped to config.max_norm.
    """
    config = config or EstimationConfig()
    obs = list(observations)
    packed = _Packed(obs)
    if packed.n < packed.dim:
        raise ValueError(
            "aggregate_mle: need at least 2d observations, got %d < %d"
            % (packed.n, packed.dim))
    nu = np.zeros(packed.dim) if warm_start is None else np.asarray(warm_start, float).copy()

    f, g = _nll_grad(packed, nu, config.lambda0)
    for _ in range(config.newton_max_iters):
        if np.linalg.norm(g) <= config.tol:
            break
        H = _mean_fisher(packed, nu, config.lambda0)
        try:
            direction = np.linalg.solve(H, g)
            if direction @ g <= 0.0:
                direction = g
        except np.linalg.LinAlgError:
            direction = g
        step = 1.0
        slope = direction @ g
        while step > 2.0 ** -45:
            f_new, g_new = _nll_grad(packed, nu - step * direction, config.lambda0)
            if f_new <= f - 1e-4 * step * slope:
                break
            step *= 0.5
        nu = nu - step * direction
        f, g = f_new, g_new
    else:
        if np.linalg.norm(g) > config.tol:
            raise ConvergenceError("aggregate_mle: Newton did not reach tolerance",
                                   last_iterate=nu, iterations=config.newton_max_iters)
    norm = np.linalg.norm(nu)
    if norm > config.max_norm:
        nu = nu * (config.max_norm / norm)
    return nu


# ---------------------------------------------------------------------------
# debias stage: l1-penalized proximal gradient
# ---------------------------------------------------------------------------

def soft_threshold(v, tau):
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def _kkt_residual(grad, delta, lam):
    """Max violation of the l1 optimality conditions."""
    on = delta != 0.0
    res_on = np.abs(grad[on] + lam * np.sign(delta[on])) if on.any() else np.zeros(0)
    res_off = np.maximum(np.abs(grad[~on]) - lam, 0.0)
    pieces = np.concatenate([res_on, res_off])
    return float(pieces.max()) if pieces.size else 0.0


def debias_l1(observations, center, lam, config=None):
    """l1-penalized correction around a fixed center.

    Minimizes mean target NLL(center + delta) + lam * ||delta||_1 by
    monotone proximal gradient with backtracking on the local Lipschitz
    constant; stops when the KKT residual drops below config.tol.
    """
    config = config or EstimationConfig()
    if lam < 0:
        raise ValueError("debias_l1: need lam >= 0")
    center = np.asarray(center, dtype=float)
    packed = _Packed(observations, dim=center.size)
    delta = np.zeros(center.size)
    lip = 1.0

    f, g = _nll_grad(packed, center + delta)
    for _ in range(config.prox_max_iters):
        if _kkt_residual(g, delta, lam) <= config.tol:
            return delta
        while True:
            cand = soft_threshold(delta - g / lip, lam / lip)
            step = cand - delta
            f_cand, g_cand = _nll_grad(packed, center + cand)
            if f_cand <= f + g @ step + 0.5 * lip * (step @ step) + 1e-12:
                break
            lip *= 2.0
            if lip > 1e12:
                raise ConvergenceError("debias_l1: backtracking stalled",
                                       last_iterate=delta)
        delta, f, g = cand, f_cand, g_cand
        lip = max(lip * 0.9, 1e-6)
    if _kkt_residual(g, delta, lam) <= config.tol:
        return delta
    raise ConvergenceError("debias_l1: proximal gradient did not reach tolerance",
                           last_iterate=delta, iterations=config.prox_max_iters)


def combine_estimator(nu_aggregate, delta):
    """Final transfer estimate: aggregate center plus debias correction."""
    nu_aggregate = np.asarray(nu_aggregate, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if nu_aggregate.shape != delta.shape:
        raise ValueError("combine_estimator: shape mismatch")
    return nu_aggregate + delta


# ---------------------------------------------------------------------------
# episode tuning schedules
# ---------------------------------------------------------------------------

@dataclass
class TuningConfig:
    """Constants feeding the episode schedules.

    eta_total is the global failure budget (default 1/T^2, set by the
    policy once the horizon is known); s0 is the sparsity level the
    learner assumes for the source-target shift.
    """
    d: int = 1
    s0: int = 0
    eta_total: float = 1.0
    c_alpha: float = 0.02
    c_lambda: float = 0.05
    c_beta: float = 0.0005
    lambda0: float = 1.0


@dataclass
class Schedules:
    alpha: float
    lam: float
    beta: float
    eta: float


def tuning_schedules(m, trace_w, episode_len, config, phi_sq=None):
    """Frozen per-episode tuning values.

    eta_m  = 6 eta_total / (pi^2 m^2)          (sums to eta_total)
    alpha_m = c_alpha sqrt(2d log(1 + tr W/(2d lambda0)) + log(2/eta_m))
    lam_m  = c_lambda sqrt(log(2d/eta_m) / episode_len)
    beta_m = c_beta s0 lam_m / max(phi_sq, floor), or 0 when phi_sq is
             None (no transfer bias to cover).
    """
    if m < 1 or episode_len < 1:
        raise ValueError("tuning_schedules: need m >= 1 and episode_len >= 1")
    two_d = 2.0 * config.d
    eta = 6.0 * config.eta_total / (np.pi ** 2 * m ** 2)
    alpha = config.c_alpha * np.sqrt(
        two_d * np.log1p(trace_w / (two_d * config.lambda0)) + np.log(2.0 / eta))
    lam = config.c_lambda * np.sqrt(np.log(two_d / eta) / episode_len)
    if phi_sq is None:
        beta = 0.0
    else:
        beta = config.c_beta * config.s0 * lam / max(phi_sq, PHI_SQ_FLOOR)
    return Schedules(float(alpha), float(lam), float(beta), float(eta))
