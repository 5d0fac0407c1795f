"""Episodic optimistic policies for multi-market assortment pricing.

One class drives three variants that share the doubling-episode
machinery (warm-up, per-episode estimates, frozen bonus radii, forced
exploration gate):

  * "tjap"        aggregate MLE on source data, l1 debias on target
                  data, two-radius optimism (variance + bias bonus);
  * "pool"        plain MLE on target+source data pooled, variance
                  bonus only;
  * "target_only" ignores source data entirely.

Episode m ends at round 2^(m-1); the first 2d rounds are a uniform
warm-up whose Gram matrix seeds the geometry.  All tuning values are
frozen at episode boundaries.
"""

import numpy as np
from dataclasses import dataclass, field

from . import estimation as est
from . import geometry as geo
from .errors import ConvergenceError, SequencingError
from .pricing import CurveTable, envelope, make_price_grid, optimal_assortment_and_prices

VARIANTS = ("tjap", "pool", "target_only")


@dataclass
class Action:
    items: np.ndarray
    prices: np.ndarray
    forced: bool
    value: float = 0.0  # solver's optimistic value; 0 for random actions


@dataclass
class PolicyConfig:
    pbar: float
    l0: float
    horizon: int
    s0: int = None   # None: assume ceil(0.2 * 2d) once d is known
    grid_points: int = 512
    kappa: float = 0.1
    c_tilde_min: float = 0.25
    # Bonus/penalty multipliers sized so that at d~10, T~2000 the optimism
    # term stays a fraction of typical revenue instead of swamping it, and
    # the sparsity penalty sits below the debias signal.  The theory-facing
    # expressions they multiply live in tuning_schedules.
    c_alpha: float = 0.02
    c_lambda: float = 0.05
    c_beta: float = 0.0005
    lambda0: float = 1.0
    c_lambda_growth: float = 0.05   # Lambda_m = this * c_tilde_min * |T_m|
    gate_window_frac: float = 0.03  # cap on the forced window as an episode fraction
    use_covariate_weights: bool = True
    eta_total: float = None
    estimation: est.EstimationConfig = field(default_factory=est.EstimationConfig)

    def __post_init__(self):
        if self.eta_total is None:
            self.eta_total = 1.0 / float(self.horizon) ** 2


def episode_index(t):
    """Episode m covering round t, with boundaries tau_m = 2^(m-1)."""
    if t < 1:
        raise ValueError("episode_index: rounds start at 1")
    return 1 if t == 1 else int(np.floor(np.log2(t - 1))) + 2


def episode_end(m):
    return 2 ** (m - 1)


class BonusEvaluator:
    """Two-radius optimism bonus with a per-episode cached inverse.

    bonus(xt) = alpha * sqrt(xt' (W + lambda0 I)^-1 xt) + beta * |xt|_inf
    """

    def __init__(self, w_matrix, lambda0, alpha, beta):
        w_matrix = np.asarray(w_matrix, dtype=float)
        dim = w_matrix.shape[0]
        self.alpha = float(alpha)
        self.beta = float(beta)
        w_bar = w_matrix + lambda0 * np.eye(dim)
        inv = np.linalg.inv(w_bar)
        self.inv = 0.5 * (inv + inv.T)
        self.d = dim // 2

    def bonus(self, feats):
        """Bonus for augmented feature rows, shape (..., 2d)."""
        feats = np.asarray(feats, dtype=float)
        mahal = np.sqrt(np.maximum(
            np.einsum("...i,ij,...j->...", feats, self.inv, feats), 0.0))
        return self.alpha * mahal + self.beta * np.abs(feats).max(axis=-1)

    def curve_table(self, contexts, nu_hat, grid):
        """Optimistic utility curves bar_v_i(p) for every item, (N, G).

        The Mahalanobis radius of (x, -p x) is a quadratic in p, so a
        single (a, b, c) triple per item covers the whole grid:
        a - 2 p b + p^2 c with the four d x d blocks of the inverse.
        """
        x = np.asarray(contexts, dtype=float)
        d = self.d
        inv_aa = self.inv[:d, :d]
        inv_ab = self.inv[:d, d:]
        inv_bb = self.inv[d:, d:]
        a = np.einsum("nd,de,ne->n", x, inv_aa, x)
        b = np.einsum("nd,de,ne->n", x, inv_ab, x)
        c = np.einsum("nd,de,ne->n", x, inv_bb, x)
        mahal_sq = a[:, None] - 2.0 * grid[None, :] * b[:, None] \
            + grid[None, :] ** 2 * c[:, None]
        mean = (x @ nu_hat[:d])[:, None] - grid[None, :] * (x @ nu_hat[d:])[:, None]
        linf = np.abs(x).max(axis=1)
        return mean + self.alpha * np.sqrt(np.maximum(mahal_sq, 0.0)) \
            + self.beta * linf[:, None] * np.maximum(grid, 1.0)[None, :]


class _EpisodeState:
    __slots__ = ("m", "t_end", "nu_hat", "nu_aggregate", "w_matrix", "bonus",
                 "alpha", "beta", "lam", "eta", "q_prev", "eigen_cleared")

    def __init__(self, m, t_end, nu_hat, nu_aggregate, w_matrix, bonus,
                 alpha, beta, lam, eta, q_prev):
        self.m = m
        self.t_end = t_end
        self.nu_hat = nu_hat
        self.nu_aggregate = nu_aggregate
        self.w_matrix = w_matrix
        self.bonus = bonus
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.eta = eta
        self.q_prev = q_prev
        self.eigen_cleared = False


class EpisodicPolicy:
    """Shared driver for the tjap / pool / target_only variants."""

    def __init__(self, d, n_items, k_offer, n_sources, config, rng,
                 variant="tjap"):
        if variant not in VARIANTS:
            raise ValueError("unknown variant %r" % (variant,))
        self.uses_sources = variant != "target_only"
        self.d = d
        self.dim = 2 * d
        self.n_items = n_items
        self.k_offer = min(k_offer, n_items)
        self.n_sources = n_sources if variant != "target_only" else 0
        self.cfg = config
        self.rng = rng
        self.variant = variant
        self.grid = make_price_grid(config.pbar, config.grid_points)
        self.warm_end = 2 * d
        s0 = config.s0 if config.s0 is not None else int(np.ceil(0.2 * 2 * d))
        self.tuning = est.TuningConfig(
            d=d, s0=s0, eta_total=config.eta_total,
            c_alpha=config.c_alpha, c_lambda=config.c_lambda,
            c_beta=config.c_beta, lambda0=config.lambda0)

        self.v_markets = [np.zeros((self.dim, self.dim))
                          for _ in range(self.n_sources + 1)]
        self.buffers = [[] for _ in range(self.n_sources + 1)]
        self.forced_total = 0
        self.t_next = 1
        self._warmed = False
        self.rollover_log = []  # one dict per rollover, for inspection
        # warm-up pseudo-episode: uniform actions until 2d rounds are in
        self.state = _EpisodeState(
            m=episode_index(max(self.warm_end, 1)),
            t_end=min(self.warm_end, config.horizon),
            nu_hat=np.zeros(self.dim), nu_aggregate=np.zeros(self.dim),
            w_matrix=np.zeros((self.dim, self.dim)), bonus=None,
            alpha=0.0, beta=0.0, lam=0.0, eta=0.0, q_prev=0)

    # -- decisions ---------------------------------------------------------

    def episode_of(self, t):
        return episode_index(t)

    def _random_action(self):
        items = np.sort(self.rng.choice(self.n_items, size=self.k_offer,
                                        replace=False))
        prices = self.rng.uniform(0.0, self.cfg.pbar, size=self.n_items)[items]
        return Action(items, prices, forced=True)

    def _gate_forced(self, t):
        s = self.state
        if s.q_prev <= 0 or s.eigen_cleared:
            return False
        if s.t_end - t + 1 > s.q_prev:  # rounds left, counting this one
            return False
        threshold = (self.cfg.kappa ** 2 * self.k_offer * s.q_prev
                     * self.cfg.c_tilde_min / 2.0)
        # V only grows within an episode, so once above the threshold we
        # can stop checking until the next rollover.
        if geo.min_eigenvalue(self.v_markets[0]) <= threshold:
            return True
        s.eigen_cleared = True
        return False

    def act(self, t, contexts):
        if t != self.t_next:
            raise SequencingError("act: expected round %d, got %d" % (self.t_next, t))
        if t <= self.warm_end or self._gate_forced(t):
            self.forced_total += 1
            return self._random_action()
        s = self.state
        bar_v = s.bonus.curve_table(contexts, s.nu_hat, self.grid)
        tilde_v = envelope(bar_v, self.grid, self.cfg.l0)
        sol = optimal_assortment_and_prices(
            CurveTable(self.grid, tilde_v), self.k_offer, self.cfg.pbar)
        return Action(sol.items, sol.prices, forced=False, value=sol.value)

    # -- learning ----------------------------------------------------------

    def learn(self, t, target_obs, source_obs=()):
        if t != self.t_next:
            raise SequencingError("learn: expected round %d, got %d" % (self.t_next, t))
        if self.variant == "target_only":
            source_obs = ()
        elif len(source_obs) != self.n_sources:
            raise SequencingError("learn: expected %d source observations"
                                  % self.n_sources)
        if t <= self.warm_end:
            # Gram-matrix warm-up update, scaled by 1/K^2
            f = target_obs.feats
            if f.shape[0]:
                self.v_markets[0] += (f.T @ f) / float(self.k_offer) ** 2
        else:
            self.v_markets[0] += geo.fisher_increment(target_obs.feats,
                                                      self.state.nu_hat)
        self.buffers[0].append(target_obs)
        if self._warmed:
            for h, obs in enumerate(source_obs):
                self.v_markets[h + 1] += geo.fisher_increment(obs.feats,
                                                              self.state.nu_hat)
                self.buffers[h + 1].append(obs)
        else:
            for h, obs in enumerate(source_obs):
                self.buffers[h + 1].append(obs)
        self.t_next = t + 1
        if t == self.state.t_end and t < self.cfg.horizon:
            if len(self.buffers[0]) < self.dim:
                # too few fresh rounds to satisfy the estimator's sample
                # precondition: merge this boundary into the next episode
                self.state.t_end = min(episode_end(episode_index(t + 1)),
                                       self.cfg.horizon)
            else:
                self._rollover(t)

    # -- episode rollover ---------------------------------------------------

    def _estimate(self, m_done):
        """New (nu_hat, nu_aggregate, use_beta) from the episode buffers."""
        cfg = self.cfg
        target = self.buffers[0]
        source = [o for buf in self.buffers[1:] for o in buf]
        try:
            if (not self._warmed or self.variant == "target_only"
                    or self.n_sources == 0):
                nu = est.aggregate_mle(target, cfg.estimation,
                                       warm_start=self.state.nu_hat)
                return nu, nu, False, 0.0
            if self.variant == "pool":
                nu = est.aggregate_mle(target + source, cfg.estimation,
                                       warm_start=self.state.nu_hat)
                return nu, nu, False, 0.0
            # tjap: aggregate on sources, debias on target
            if len(source) < self.dim:
                nu = est.aggregate_mle(target, cfg.estimation,
                                       warm_start=self.state.nu_hat)
                return nu, nu, False, 0.0
            nu_ag = est.aggregate_mle(source, cfg.estimation,
                                      warm_start=self.state.nu_aggregate)
            sched = est.tuning_schedules(m_done, 0.0, len(target), self.tuning)
            delta = est.debias_l1(target, nu_ag, sched.lam, cfg.estimation)
            return est.combine_estimator(nu_ag, delta), nu_ag, True, sched.lam
        except ConvergenceError as e:
            raise ConvergenceError("episode %d: %s" % (m_done, e),
                                   last_iterate=e.last_iterate,
                                   iterations=e.iterations) from e

    def _rollover(self, t0):
        m_next = episode_index(t0 + 1)
        m_done = max(m_next - 1, 1)
        n_target = max(len(self.buffers[0]), 1)

        nu_hat, nu_ag, use_beta, lam = self._estimate(m_done)

        # pooled geometry with covariate-shift weights
        if self.n_sources and self.variant in ("tjap", "pool"):
            weights = self._market_weights()
            w_matrix = geo.pool_geometry(self.v_markets[0],
                                         self.v_markets[1:], weights)
        else:
            w_matrix = self.v_markets[0].copy()

        phi_sq = None
        if use_beta:
            phi_sq = geo.min_eigenvalue(self.v_markets[0]) / n_target
        sched = est.tuning_schedules(m_done, float(np.trace(w_matrix)),
                                     n_target, self.tuning, phi_sq=phi_sq)
        beta = sched.beta if use_beta else 0.0

        t_end = min(episode_end(m_next), self.cfg.horizon)
        len_next = max(t_end - t0, 1)
        lam_target = (self.cfg.c_lambda_growth * self.cfg.c_tilde_min
                      * len_next)
        q_formula = geo.forced_exploration_length(
            lam_target, self.cfg.kappa, self.k_offer, self.cfg.c_tilde_min,
            self.d, self.cfg.pbar, sched.eta)
        q_prev = min(q_formula,
                     int(np.ceil(self.cfg.gate_window_frac * len_next)))

        bonus = BonusEvaluator(w_matrix, self.cfg.lambda0, sched.alpha, beta)
        self.state = _EpisodeState(
            m=m_next, t_end=t_end, nu_hat=nu_hat, nu_aggregate=nu_ag,
            w_matrix=w_matrix, bonus=bonus, alpha=sched.alpha, beta=beta,
            lam=lam if use_beta else sched.lam, eta=sched.eta, q_prev=q_prev)
        self.rollover_log.append(dict(
            t=t0, m=m_next, n_target=len(self.buffers[0]),
            alpha=sched.alpha, beta=beta, lam=self.state.lam,
            q_prev=q_prev, phi_sq=phi_sq, nu_hat=nu_hat.copy(),
            nu_aggregate=nu_ag.copy()))
        self._warmed = True
        for v in self.v_markets:
            v[:] = 0.0
        for buf in self.buffers:
            buf.clear()

    def _market_weights(self):
        if not self.cfg.use_covariate_weights:
            return [1.0] * self.n_sources
        tx = np.concatenate([o.feats[:, :self.d] for o in self.buffers[0]]) \
            if self.buffers[0] else np.zeros((0, self.d))
        weights = []
        for buf in self.buffers[1:]:
            if not buf or tx.shape[0] == 0:
                weights.append(1.0)
                continue
            sx = np.concatenate([o.feats[:, :self.d] for o in buf])
            weights.append(geo.market_weight(geo.estimate_chi_squared(tx, sx)))
        return weights
