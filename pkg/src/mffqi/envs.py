"""Simulated mean-field MDPs observed through ``N`` agents.

Two environment families are provided:

``gaussian_drift``
    Continuous states in R^d.  Every agent is pulled towards the empirical
    mean, shifted by an action-dependent drift and perturbed by Gaussian
    noise.  The reward is ``r_max * sigmoid(w . mean + offset_a)``.

``discrete_chain``
    ``|S|`` lattice states embedded in R^1 at ``spacing * s``.  Agents move
    independently under per-action transition matrices; the reward is a
    function of the action and the state histogram.  With deterministic
    transitions the histogram evolves deterministically and the exact
    optimal Q-function is computable (see :mod:`mffqi.oracle`).

Rewards depend on the sample only through the mean or the histogram, so
they are invariant to relabelling the agents.  Each batch record draws from
its own generator seeded by ``(seed, record index)``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from mffqi.exceptions import ConfigurationError, ContractViolation
from mffqi.fqi import Batch, GreedyPolicy, TransitionRecord, greedy_action
from mffqi.validation import canonical_states, check_action

GAUSSIAN_DRIFT = "gaussian_drift"
DISCRETE_CHAIN = "discrete_chain"


@dataclass(frozen=True)
class GaussianDriftParams:
    d: int = 1
    drifts: tuple = ((-0.5,), (0.5,))
    pull: float = 0.5
    noise_std: float = 0.1
    reward_weights: tuple = (1.0,)
    reward_offsets: tuple = (0.0, -0.5)
    init_spread: float = 1.0
    reward_noise: float = 0.0

    def __post_init__(self):
        drifts = np.asarray(self.drifts, dtype=float)
        if drifts.ndim != 2 or drifts.shape[1] != self.d:
            raise ConfigurationError(f"drifts must have shape (n_actions, {self.d}), got {drifts.shape}")
        if len(self.reward_offsets) != drifts.shape[0]:
            raise ConfigurationError("need one reward offset per action")
        if len(self.reward_weights) != self.d:
            raise ConfigurationError(f"reward_weights must have length {self.d}")
        if not 0.0 <= self.pull < 1.0:
            raise ConfigurationError(f"pull must lie in [0, 1), got {self.pull}")
        if self.noise_std < 0 or self.init_spread < 0 or self.reward_noise < 0:
            raise ConfigurationError("noise scales must be nonnegative")
        object.__setattr__(self, "drifts", tuple(tuple(map(float, row)) for row in drifts))
        object.__setattr__(self, "reward_weights", tuple(map(float, self.reward_weights)))
        object.__setattr__(self, "reward_offsets", tuple(map(float, self.reward_offsets)))

    @property
    def n_actions(self):
        return len(self.drifts)


@dataclass(frozen=True)
class DiscreteChainParams:
    """Per-agent Markov chain on ``n_states`` lattice points.

    ``transitions[a][s]`` is the next-state distribution of one agent under
    action ``a``.  Rewards come from ``reward_table`` (a list of
    ``{"action", "counts", "reward"}`` entries) when given, otherwise from
    ``r_max * sum_s reward_weights[a][s] * fraction_s`` with weights in [0, 1].
    ``init`` is ``"dirichlet"`` (a mean-field state drawn uniformly from the
    simplex, then agents i.i.d. from it) or a fixed probability vector.
    ``obs_noise`` adds Gaussian jitter to recorded observations only.

    With ``population`` set, the mean-field state is a hidden population of
    that many agents and each recorded sample is ``N`` agents drawn i.i.d.
    from it.  Without it the ``N`` agents are the population itself.
    """

    n_states: int = 2
    transitions: tuple = (((1.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (1.0, 0.0)))
    reward_weights: tuple = ((0.3, 1.0), (0.05, 0.0))
    reward_table: tuple = None
    spacing: float = 3.0
    init: object = "dirichlet"
    obs_noise: float = 0.0
    reward_noise: float = 0.0
    population: int = None

    def __post_init__(self):
        if self.population is not None and (int(self.population) != self.population or self.population < 1):
            raise ConfigurationError(f"population must be a positive integer, got {self.population}")
        P = np.asarray(self.transitions, dtype=float)
        k = self.n_states
        if P.ndim != 3 or P.shape[1:] != (k, k):
            raise ConfigurationError(f"transitions must have shape (n_actions, {k}, {k}), got {P.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=-1), 1.0, atol=1e-12):
            raise ConfigurationError("transition rows must be probability vectors")
        object.__setattr__(self, "transitions", tuple(tuple(tuple(map(float, r)) for r in m) for m in P))
        if self.reward_table is None:
            W = np.asarray(self.reward_weights, dtype=float)
            if W.shape != (P.shape[0], k) or np.any(W < 0) or np.any(W > 1):
                raise ConfigurationError(f"reward_weights must be a ({P.shape[0]}, {k}) matrix with entries in [0, 1]")
            object.__setattr__(self, "reward_weights", tuple(tuple(map(float, r)) for r in W))
        else:
            table = tuple(
                {"action": int(e["action"]), "counts": tuple(int(c) for c in e["counts"]), "reward": float(e["reward"])}
                for e in self.reward_table
            )
            object.__setattr__(self, "reward_table", table)
        if isinstance(self.init, str):
            if self.init != "dirichlet":
                raise ConfigurationError(f"unknown init {self.init!r}")
        else:
            p = np.asarray(self.init, dtype=float)
            if p.shape != (k,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ConfigurationError("init must be 'dirichlet' or a probability vector over states")
            object.__setattr__(self, "init", tuple(map(float, p)))
        if self.spacing <= 0 or self.obs_noise < 0 or self.reward_noise < 0:
            raise ConfigurationError("spacing must be positive and noise scales nonnegative")

    @property
    def n_actions(self):
        return len(self.transitions)

    @property
    def deterministic(self):
        P = np.asarray(self.transitions)
        return bool(np.all((P == 0.0) | (P == 1.0)))

    def next_state_map(self):
        """(n_actions, n_states) integer array of deterministic successors."""
        if not self.deterministic:
            raise ConfigurationError("transition matrices are not deterministic")
        return np.asarray(self.transitions).argmax(axis=-1)

    def reward(self, action, counts, r_max=1.0):
        """Deterministic reward for an action and a state histogram."""
        counts = tuple(int(c) for c in counts)
        if self.reward_table is not None:
            for e in self.reward_table:
                if e["action"] == action and e["counts"] == counts:
                    return e["reward"]
            raise ConfigurationError(f"reward table has no entry for action {action}, counts {counts}")
        frac = np.asarray(counts, dtype=float) / sum(counts)
        return r_max * float(np.dot(self.reward_weights[action], frac))

    def coordinates(self, lattice):
        return np.asarray(lattice, dtype=float).reshape(-1, 1) * self.spacing


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    params: object
    n_agents: int
    r_max: float = 1.0
    gamma: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN_DRIFT, DISCRETE_CHAIN):
            raise ConfigurationError(f"unknown environment kind {self.kind!r}")
        expected = GaussianDriftParams if self.kind == GAUSSIAN_DRIFT else DiscreteChainParams
        params = self.params
        if isinstance(params, dict):
            try:
                params = expected(**params)
            except TypeError as exc:
                raise ConfigurationError(f"bad {self.kind} parameters: {exc}") from exc
        if not isinstance(params, expected):
            raise ConfigurationError(f"{self.kind} needs {expected.__name__}")
        object.__setattr__(self, "params", params)
        if int(self.n_agents) != self.n_agents or self.n_agents < 1:
            raise ConfigurationError(f"n_agents must be a positive integer, got {self.n_agents}")
        if not self.r_max > 0:
            raise ConfigurationError("r_max must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.kind == DISCRETE_CHAIN and params.reward_table is not None:
            if any(not 0.0 <= e["reward"] <= self.r_max for e in params.reward_table):
                raise ConfigurationError("reward table entries must lie in [0, r_max]")

    @property
    def n_actions(self):
        return self.params.n_actions

    @property
    def q_max(self):
        return self.r_max / (1.0 - self.gamma)

    def to_dict(self):
        params = asdict(self.params)
        return {"kind": self.kind, "n_agents": self.n_agents, "r_max": self.r_max, "gamma": self.gamma,
                "seed": self.seed, "params": _jsonable(params)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d.pop("params", {}), **d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def record_rng(seed, index):
    """Independent generator for record ``index`` of a batch."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def env_reset(spec, rng):
    """Draw the ``N`` agent states of a fresh mean-field state."""
    p, n = spec.params, spec.n_agents
    if spec.kind == GAUSSIAN_DRIFT:
        center = rng.normal(0.0, p.init_spread, size=p.d)
        return center + rng.standard_normal((n, p.d))
    probs = rng.dirichlet(np.ones(p.n_states)) if p.init == "dirichlet" else np.asarray(p.init)
    lattice = rng.choice(p.n_states, size=population_size(spec), p=probs)
    return p.coordinates(lattice)


def lattice_indices(spec_or_params, sample, atol=1e-9):
    """Lattice index of every agent; raises on off-lattice states."""
    p = getattr(spec_or_params, "params", spec_or_params)
    x = np.asarray(sample, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ContractViolation(f"discrete chain states are 1-D, got dimension {x.shape[1]}")
        x = x[:, 0]
    idx = np.rint(x / p.spacing)
    if np.any(np.abs(x - idx * p.spacing) > atol) or np.any(idx < 0) or np.any(idx >= p.n_states):
        raise ContractViolation("sample contains states off the lattice")
    return idx.astype(int)


def env_step(spec, sample, action, rng):
    """Advance one step; returns ``(reward, next_sample)``."""
    p = spec.params
    action = check_action(action, spec.n_actions)
    # canonical agent order makes reward and next sample exchangeable bit for bit
    x = canonical_states(np.asarray(sample, dtype=float).reshape(len(sample), -1))
    if spec.kind == GAUSSIAN_DRIFT:
        if x.shape[1] != p.d:
            raise ContractViolation(f"expected {p.d}-dimensional states, got {x.shape[1]}")
        mean = x.mean(axis=0)
        logits = float(np.dot(p.reward_weights, mean)) + p.reward_offsets[action]
        reward = spec.r_max / (1.0 + np.exp(-logits))
        nxt = (1.0 - p.pull) * x + p.pull * mean + np.asarray(p.drifts[action])
        if p.noise_std > 0:
            nxt = nxt + rng.normal(0.0, p.noise_std, size=x.shape)
    else:
        idx = lattice_indices(p, x)
        counts = np.bincount(idx, minlength=p.n_states)
        reward = p.reward(action, counts, spec.r_max)
        if p.deterministic:
            nxt_idx = p.next_state_map()[action][idx]
        else:
            P = np.asarray(p.transitions[action])
            cum = np.cumsum(P[idx], axis=1)
            u = rng.random(len(idx))[:, None]
            nxt_idx = np.minimum((u >= cum).sum(axis=1), p.n_states - 1)
        nxt = p.coordinates(nxt_idx)
    if p.reward_noise > 0:
        reward = reward + rng.normal(0.0, p.reward_noise)
    reward = float(min(max(reward, 0.0), spec.r_max))
    return reward, nxt


def population_size(spec):
    """Number of agents in the simulated population (the oracle's ``N``)."""
    return getattr(spec.params, "population", None) or spec.n_agents


def observe(spec, sample, rng):
    """Recorded view of a population: ``N`` i.i.d. draws and/or jitter where configured."""
    p = spec.params
    noise = getattr(p, "obs_noise", 0.0)
    x = np.asarray(sample, dtype=float)
    if getattr(p, "population", None) is not None:
        x = x[rng.integers(len(x), size=spec.n_agents)]
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    return x


UNIFORM = "uniform"


@dataclass(frozen=True)
class FixedAction:
    action: int


def _choose(policy, spec, sample, rng):
    if policy == UNIFORM or policy is None:
        return int(rng.integers(spec.n_actions))
    if isinstance(policy, FixedAction):
        return check_action(policy.action, spec.n_actions)
    if isinstance(policy, GreedyPolicy):
        return greedy_action(policy, observe(spec, sample, rng))
    raise ConfigurationError(f"unknown action policy {policy!r}")


def collect_batch(spec, n, action_policy=UNIFORM, seed=None):
    """``n`` records, each from a fresh reset followed by one step.

    ``action_policy`` is ``"uniform"``, :class:`FixedAction` or a
    :class:`~mffqi.fqi.GreedyPolicy`.  ``seed`` defaults to ``spec.seed``.
    """
    if int(n) != n or n < 1:
        raise ConfigurationError(f"batch size must be a positive integer, got {n}")
    seed = spec.seed if seed is None else seed
    records = []
    for i in range(int(n)):
        rng = record_rng(seed, i)
        s = env_reset(spec, rng)
        a = _choose(action_policy, spec, s, rng)
        r, s_next = env_step(spec, s, a, rng)
        records.append(TransitionRecord(observe(spec, s, rng), a, r, observe(spec, s_next, rng)))
    meta = {"env": spec.to_dict(), "seed": int(seed)}
    return Batch(records, spec.r_max, spec.gamma, spec.n_actions, meta=meta)


def reference_chain(n_agents=4, gamma=0.9, obs_noise=0.0, population=None, seed=0):
    """Two-state, two-action chain with deterministic hold/flip dynamics.

    Action 0 keeps every agent in place and pays ``0.3 + 0.7 f``; action 1
    swaps the two states and pays ``0.05 (1 - f)``, where ``f`` is the fraction
    of agents in state 1.  The immediate-reward gap is at least ``0.25 r_max``.
    """
    params = DiscreteChainParams(obs_noise=obs_noise, population=population)
    return EnvSpec(DISCRETE_CHAIN, params, n_agents, r_max=1.0, gamma=gamma, seed=seed)
