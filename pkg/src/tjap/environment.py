"""Multi-market simulator: scenario sampling, data streams, run loop.

A scenario holds one target market and H source markets.  All markets
see the same context matrix X_t each round (iid coordinates
min(|N(0,1)|, 1)).  Each source market differs from the target by its
own sparse parameter shift, supported on a coordinate set common to
all sources, and is logged by a fixed uniform policy by default.
Every stream is seeded by a stable hash of (scenario seed, stream
label, round), so contexts and source data are bit-identical across
algorithms and runs.
"""

import hashlib

import numpy as np
from dataclasses import dataclass

from . import geometry as geo
from . import mnl
from .errors import ConfigError
from .estimation import Observation, aggregate_mle, EstimationConfig
from .policy import Action, EpisodicPolicy, PolicyConfig, episode_index, episode_end
from .pricing import LinearUtility, optimal_assortment_and_prices, single_item_optimal_price

GAMMA_FLOOR = 1e-3

ALGORITHMS = ("tjap", "pool", "target_only", "topk_pricing", "clairvoyant")


def derive_seed(*parts):
    """Stable 64-bit seed from a mixed tuple of ints and strings.

    Independent of PYTHONHASHSEED and platform so that runs replay
    byte-identically.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, (bool, float)):
            raise TypeError("seed parts must be ints or strings, got %r" % (p,))
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + str(int(p)).encode("ascii"))
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        else:
            raise TypeError("seed parts must be ints or strings, got %r" % (p,))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def _context_block(rng, n_items, d):
    return np.minimum(np.abs(rng.normal(size=(n_items, d))), 1.0)


def draw_contexts(scenario_seed, t, n_items, d):
    """Target-market feature matrix for round t, shape (n_items, d)."""
    rng = np.random.default_rng(derive_seed(scenario_seed, "ctx", t))
    return _context_block(rng, n_items, d)


@dataclass
class MarketScenario:
    d: int
    n_items: int
    k_offer: int
    n_sources: int
    s0: int
    shift_magnitude: float
    l0: float
    utility_bound: float
    pbar: float
    horizon: int
    seed: int
    nu_target: np.ndarray          # (2d,)
    source_nus: np.ndarray         # (n_sources, 2d)
    shifts: np.ndarray             # (n_sources, 2d) sparse per-source shifts
    support: np.ndarray            # (s0,) shift support, common to all sources
    c_tilde_min: float

    @property
    def theta(self):
        return self.nu_target[:self.d]

    @property
    def gamma(self):
        return self.nu_target[self.d:]


def _floor_scale(gamma, support_gamma, shift, l0, seed_parts, horizon,
                 n_items, d):
    """Smallest c >= 1 keeping every market's price slope at or above l0.

    Scans the realized context stream and returns c such that
    c*<x, gamma> - shift * sum_{j in support_gamma} x_j >= l0 for every
    item at every round.  The subtracted term is the worst case of a
    +-shift sparse perturbation on the support, so any source built by
    adding such a shift to c*gamma inherits the floor for free.
    """
    c = 1.0
    for t in range(1, horizon + 1):
        rng = np.random.default_rng(derive_seed(*seed_parts, t))
        x = _context_block(rng, n_items, d)
        a = x @ gamma
        if a.min() <= 1e-12:
            raise ConfigError(
                "price-sensitivity floor scan hit a nonpositive slope")
        dip = l0
        if support_gamma.size:
            dip = l0 + shift * x[:, support_gamma].sum(axis=1)
        c = max(c, float(np.max(dip / a)))
    return c


def generate_scenario(d, n_items, k_offer, n_sources, s0, shift_magnitude,
                      l0, horizon, seed, utility_bound=None):
    """Draw a full multi-market instance.

    Target (theta, gamma) is a normalized Gaussian draw with |gamma|
    entries; gamma is then rescaled minimally upward so that on the
    realized context stream every per-item price slope stays at or
    above l0 in EVERY market, including the worst sign pattern of the
    sparse shift.  Sources then keep their shifts exactly sparse: each
    source h adds its own +-shift_magnitude signs on a support of size
    s0 that is common across sources.  The scale is independent of
    n_sources, so the target market is identical across H for a fixed
    seed.
    """
    if d < 1 or n_items < 1 or not (1 <= k_offer <= n_items):
        raise ConfigError("need d >= 1 and 1 <= k_offer <= n_items")
    if n_sources < 0 or s0 < 0 or s0 > 2 * d:
        raise ConfigError("need n_sources >= 0 and 0 <= s0 <= 2d")
    if l0 <= 0 or shift_magnitude < 0 or horizon < 1:
        raise ConfigError("need l0 > 0, shift_magnitude >= 0, horizon >= 1")
    if utility_bound is None:
        utility_bound = float(d)

    rng = np.random.default_rng(derive_seed(seed, "param"))
    theta = rng.normal(size=d)
    gamma = np.abs(rng.normal(size=d))
    nu = np.concatenate([theta, gamma])
    norm = np.linalg.norm(nu)
    if norm > 1.0:
        nu = nu / norm
    theta, gamma = nu[:d], nu[d:]

    support = np.array([], dtype=int)
    if s0 > 0:
        support = np.sort(rng.choice(2 * d, size=s0, replace=False))
    support_gamma = support[support >= d] - d

    scale = _floor_scale(gamma, support_gamma, shift_magnitude, l0,
                         (seed, "ctx"), horizon, n_items, d)
    gamma = gamma * scale
    nu_target = np.concatenate([theta, gamma])

    # Sources are exactly nu_target + shift; the floor scan above already
    # covers every sign pattern, so no per-coordinate clipping is needed
    # (which would silently densify the shift).
    shifts = np.zeros((n_sources, 2 * d))
    for h in range(n_sources):
        if s0 > 0:
            shifts[h, support] = shift_magnitude * rng.choice([-1.0, 1.0],
                                                              size=s0)
    source_nus = nu_target[None, :] + shifts

    pbar = mnl.price_cap(k_offer, utility_bound, l0)

    mc = np.random.default_rng(derive_seed(seed, "ctilde"))
    xs = _context_block(mc, 2000, d)
    ps = mc.uniform(0.0, pbar, size=2000)
    feats = mnl.augment_feature(xs, ps)
    c_tilde = geo.min_eigenvalue(feats.T @ feats / feats.shape[0])

    return MarketScenario(
        d=d, n_items=n_items, k_offer=k_offer, n_sources=n_sources, s0=s0,
        shift_magnitude=shift_magnitude, l0=l0,
        utility_bound=float(utility_bound), pbar=float(pbar),
        horizon=horizon, seed=seed, nu_target=nu_target,
        source_nus=source_nus, shifts=shifts, support=support,
        c_tilde_min=float(c_tilde))


def source_step(scenario, h, t, contexts):
    """One logged observation from source market h (1-based) at round t.

    All markets share the round's context matrix.  The logging policy
    offers a uniform assortment at uniform prices; its randomness
    depends only on (scenario seed, h, t), never on the learner, so
    every algorithm sees identical source data.
    """
    if not (1 <= h <= scenario.n_sources):
        raise ConfigError("source index out of range")
    rng = np.random.default_rng(derive_seed(scenario.seed, "src", h, t))
    x = np.asarray(contexts, dtype=float)
    items = np.sort(rng.choice(scenario.n_items, size=scenario.k_offer,
                               replace=False))
    prices = rng.uniform(0.0, scenario.pbar, size=scenario.k_offer)
    feats = mnl.augment_feature(x[items], prices)
    utilities = feats @ scenario.source_nus[h - 1]
    probs = mnl.choice_probabilities(utilities)
    j = mnl.sample_choice(probs, rng)
    choice = j if j < items.size else -1
    return Observation(market=h, t=t, items=items, prices=prices,
                       feats=feats, choice=choice)


class _GreedySource:
    """Source market that runs its own target-only learner.

    Alternative to the uniform logging policy for robustness
    experiments: source h prices with an EpisodicPolicy fitted to its
    own purchase stream.  All randomness is keyed to (scenario, h, t),
    never to the learner under evaluation, so every algorithm still
    sees an identical source stream.
    """

    def __init__(self, scenario, h):
        self.scenario = scenario
        self.h = h
        self.nu = scenario.source_nus[h - 1]
        self.policy = make_policy("target_only", scenario,
                                  derive_seed(scenario.seed, "srcpol", h))

    def step(self, t, contexts):
        action = self.policy.act(t, contexts)
        feats = mnl.augment_feature(contexts[action.items], action.prices)
        probs = mnl.choice_probabilities(feats @ self.nu)
        u = np.random.default_rng(
            derive_seed(self.scenario.seed, "srcbuy", self.h, t)).random()
        j = mnl.choice_from_uniform(probs, u)
        choice = j if j < action.items.size else -1
        obs = Observation(market=self.h, t=t, items=action.items,
                          prices=action.prices, feats=feats, choice=choice)
        self.policy.learn(t, obs, [])
        return obs


def _true_curves(scenario, contexts):
    tv = contexts @ scenario.theta
    gv = contexts @ scenario.gamma
    return [LinearUtility(float(tv[i]), float(gv[i]))
            for i in range(contexts.shape[0])]


def clairvoyant_value(scenario, contexts):
    """Optimal expected revenue for this round under the true model."""
    sol = optimal_assortment_and_prices(_true_curves(scenario, contexts),
                                        scenario.k_offer, scenario.pbar)
    return sol.value, sol


def expected_round_revenue(scenario, contexts, items, prices):
    feats = mnl.augment_feature(contexts[items], prices)
    utilities = feats @ scenario.nu_target
    return mnl.expected_revenue(prices, utilities)


class ClairvoyantPolicy:
    """Plays the true-model optimum every round; ignores all feedback."""

    uses_sources = False

    def __init__(self, scenario):
        self.scenario = scenario
        self.forced_total = 0
        self.state = None

    def act(self, t, contexts):
        _, sol = clairvoyant_value(self.scenario, contexts)
        return Action(sol.items, sol.prices, forced=False, value=sol.value)

    def learn(self, t, target_obs, source_obs=()):
        pass


class TopKPricingPolicy:
    """Assortment by estimated base utility, prices set per item.

    Ignores source data and substitution effects: after each episode it
    refits a target-only MLE, offers the K items with the largest
    estimated zero-price utility, and prices each one as if it were
    sold alone.
    """

    uses_sources = False

    def __init__(self, d, n_items, k_offer, config, rng):
        self.d = d
        self.dim = 2 * d
        self.n_items = n_items
        self.k_offer = min(k_offer, n_items)
        self.cfg = config
        self.rng = rng
        self.warm_end = 2 * d
        self.t_next = 1
        self.t_end = min(self.warm_end, config.horizon)
        self.nu_hat = np.zeros(self.dim)
        self.buffer = []
        self.forced_total = 0

    def act(self, t, contexts):
        if t <= self.warm_end:
            self.forced_total += 1
            items = np.sort(self.rng.choice(self.n_items, size=self.k_offer,
                                            replace=False))
            prices = self.rng.uniform(0.0, self.cfg.pbar, size=self.k_offer)
            return Action(items, prices, forced=True)
        x = contexts
        scores = x @ self.nu_hat[:self.d]
        items = np.sort(np.argsort(-scores, kind="stable")[:self.k_offer])
        slopes = np.maximum(x[items] @ self.nu_hat[self.d:], GAMMA_FLOOR)
        prices = np.array([
            single_item_optimal_price(float(scores[i]), float(g),
                                      self.cfg.pbar)[0]
            for i, g in zip(items, slopes)])
        return Action(items, prices, forced=False)

    def learn(self, t, target_obs, source_obs=()):
        self.buffer.append(target_obs)
        if t == self.t_end and t < self.cfg.horizon:
            if len(self.buffer) >= self.dim:
                self.nu_hat = aggregate_mle(self.buffer, self.cfg.estimation,
                                            warm_start=self.nu_hat)
                self.buffer = []
            self.t_end = min(episode_end(episode_index(t + 1)),
                             self.cfg.horizon)
        self.t_next = t + 1


def make_policy(algorithm, scenario, seed, overrides=None):
    """Instantiate a registered policy for a scenario.

    overrides: optional dict of PolicyConfig field replacements (tuning
    constants, grid size, gate fraction).
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError("unknown algorithm %r; known: %s"
                          % (algorithm, ", ".join(ALGORITHMS)))
    fields = dict(pbar=scenario.pbar, l0=scenario.l0,
                  horizon=scenario.horizon, s0=scenario.s0,
                  c_tilde_min=scenario.c_tilde_min)
    if overrides:
        fields.update(overrides)
    config = PolicyConfig(**fields)
    rng = np.random.default_rng(derive_seed(seed, "policy"))
    if algorithm == "clairvoyant":
        return ClairvoyantPolicy(scenario)
    if algorithm == "topk_pricing":
        return TopKPricingPolicy(scenario.d, scenario.n_items,
                                 scenario.k_offer, config, rng)
    variant = {"tjap": "tjap", "pool": "pool",
               "target_only": "target_only"}[algorithm]
    return EpisodicPolicy(scenario.d, scenario.n_items, scenario.k_offer,
                          scenario.n_sources, config, rng, variant=variant)


@dataclass
class RunResult:
    algorithm: str
    scenario_seed: int
    run_seed: int
    cum_regret: np.ndarray        # (T,) expected regret, accumulated
    forced: np.ndarray            # (T,) cumulative forced-action count
    episode: np.ndarray           # (T,) episode index of each round
    expected_revenue: np.ndarray  # (T,) true-model revenue of the action
    realized_revenue: np.ndarray  # (T,) price paid by the sampled buyer
    clairvoyant: np.ndarray       # (T,) per-round optimum


def run_policy(scenario, algorithm, run_seed, overrides=None,
               final_state=None, source_policy="uniform"):
    """Play one policy for the scenario's horizon and record regret.

    Regret is measured in expectation: per round, the clairvoyant
    optimum minus the true-model expected revenue of the played action
    (the sampled purchase only feeds learning).  source_policy selects
    how the source markets are logged: "uniform" (default) or "greedy"
    (each source runs its own target-only learner).  Passing a dict as
    final_state exposes the finished policy object under key "policy".
    """
    if source_policy not in ("uniform", "greedy"):
        raise ConfigError("source_policy must be 'uniform' or 'greedy'")
    policy = make_policy(algorithm, scenario, run_seed, overrides)
    greedy_sources = None
    if (source_policy == "greedy" and policy.uses_sources
            and scenario.n_sources):
        greedy_sources = [_GreedySource(scenario, h)
                          for h in range(1, scenario.n_sources + 1)]
    horizon = scenario.horizon
    cum = np.zeros(horizon)
    forced = np.zeros(horizon, dtype=np.int64)
    episode = np.zeros(horizon, dtype=np.int64)
    exp_rev = np.zeros(horizon)
    real_rev = np.zeros(horizon)
    clair = np.zeros(horizon)
    total = 0.0
    for t in range(1, horizon + 1):
        x = draw_contexts(scenario.seed, t, scenario.n_items, scenario.d)
        action = policy.act(t, x)
        star, _ = clairvoyant_value(scenario, x)
        played = expected_round_revenue(scenario, x, action.items,
                                        action.prices)
        total += star - played

        # the buyer's draw is keyed by (scenario, round) so every
        # algorithm faces the same customer at round t
        feats = mnl.augment_feature(x[action.items], action.prices)
        utilities = feats @ scenario.nu_target
        probs = mnl.choice_probabilities(utilities)
        buyer = np.random.default_rng(
            derive_seed(scenario.seed, "buy", t)).random()
        j = mnl.choice_from_uniform(probs, buyer)
        choice = j if j < action.items.size else -1
        target_obs = Observation(market=0, t=t, items=action.items,
                                 prices=action.prices, feats=feats,
                                 choice=choice)
        if policy.uses_sources and scenario.n_sources:
            if greedy_sources is None:
                source_obs = [source_step(scenario, h, t, x)
                              for h in range(1, scenario.n_sources + 1)]
            else:
                source_obs = [g.step(t, x) for g in greedy_sources]
        else:
            source_obs = []
        policy.learn(t, target_obs, source_obs)

        cum[t - 1] = total
        forced[t - 1] = policy.forced_total
        episode[t - 1] = episode_index(t)
        exp_rev[t - 1] = played
        real_rev[t - 1] = 0.0 if choice < 0 else action.prices[choice]
        clair[t - 1] = star
    if final_state is not None:
        final_state["policy"] = policy
    return RunResult(algorithm=algorithm, scenario_seed=scenario.seed,
                     run_seed=run_seed, cum_regret=cum, forced=forced,
                     episode=episode, expected_revenue=exp_rev,
                     realized_revenue=real_rev, clairvoyant=clair)
