"""Exact optimal Q-values for deterministic discrete chains.

With deterministic per-agent transitions an ``N``-agent population moves
between state histograms deterministically, so the mean-field MDP is a finite
deterministic MDP over histograms.  Value iteration on that MDP gives Q*
exactly, which in turn grades a learned Q-function over every configuration.
"""

import csv
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from mffqi.envs import lattice_indices, observe, population_size
from mffqi.exceptions import ContractViolation, UnsupportedConfiguration
from mffqi.kernels import Config
from mffqi.regression import predict_batch


def all_histograms(n_states, n_agents):
    """Every composition of ``n_agents`` into ``n_states`` nonnegative counts."""
    out = []
    for bars in combinations(range(n_agents + n_states - 1), n_states - 1):
        edges = (-1,) + bars + (n_agents + n_states - 1,)
        out.append(tuple(edges[i + 1] - edges[i] - 1 for i in range(n_states)))
    return sorted(out, reverse=True)


def next_histogram(counts, successor):
    nxt = [0] * len(counts)
    for s, c in enumerate(counts):
        nxt[successor[s]] += c
    return tuple(nxt)


def enumerate_configs(params, n_agents, init=None):
    """Histograms reachable from ``init`` under every action (BFS closure).

    ``init`` is one histogram, a list of histograms, or ``None`` for every
    histogram of ``n_agents`` agents.
    """
    if not params.deterministic:
        raise UnsupportedConfiguration("exact enumeration needs deterministic transitions")
    succ = params.next_state_map()
    if init is None:
        starts = all_histograms(params.n_states, n_agents)
    elif np.ndim(init[0]) == 0:
        starts = [tuple(int(c) for c in init)]
    else:
        starts = [tuple(int(c) for c in h) for h in init]
    for h in starts:
        if len(h) != params.n_states or sum(h) != n_agents or min(h) < 0:
            raise ContractViolation(f"{h} is not a histogram of {n_agents} agents over {params.n_states} states")
    seen = dict.fromkeys(starts)
    queue = deque(seen)
    while queue:
        h = queue.popleft()
        for a in range(params.n_actions):
            nxt = next_histogram(h, succ[a])
            if nxt not in seen:
                seen[nxt] = None
                queue.append(nxt)
    return list(seen)


@dataclass
class OracleTable:
    states: list
    q_values: np.ndarray
    gamma: float
    r_max: float
    sweep_deltas: list = field(default_factory=list)

    def __post_init__(self):
        self.index = {h: i for i, h in enumerate(self.states)}

    @property
    def q_max(self):
        return self.r_max / (1.0 - self.gamma)

    def q(self, action, counts):
        return float(self.q_values[self.index[tuple(counts)], action])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["histogram", "action", "q_star"])
            for h, row in zip(self.states, self.q_values):
                for a, v in enumerate(row):
                    writer.writerow([" ".join(map(str, h)), a, repr(float(v))])


def _tables(states, params, r_max):
    index = {h: i for i, h in enumerate(states)}
    succ = params.next_state_map()
    rewards = np.array([[params.reward(a, h, r_max) for a in range(params.n_actions)] for h in states])
    try:
        nxt = np.array([[index[next_histogram(h, succ[a])] for a in range(params.n_actions)] for h in states])
    except KeyError as exc:
        raise ContractViolation(f"state set is not closed under the dynamics: {exc}") from None
    return rewards, nxt


def exact_value_iteration(states, params, gamma, r_max=1.0, tol=1e-12, max_sweeps=1_000_000):
    """Synchronous value iteration until the sup-norm change is at most ``tol``."""
    if not params.deterministic:
        raise UnsupportedConfiguration("exact value iteration needs deterministic transitions")
    states = [tuple(h) for h in states]
    rewards, nxt = _tables(states, params, r_max)
    q = np.zeros_like(rewards)
    deltas = []
    for _ in range(max_sweeps):
        q_new = rewards + gamma * q.max(axis=1)[nxt]
        delta = float(np.max(np.abs(q_new - q)))
        deltas.append(delta)
        q = q_new
        if delta <= tol:
            break
    return OracleTable(states, q, gamma, r_max, deltas)


def bellman_error(table, params):
    rewards, nxt = _tables(table.states, params, table.r_max)
    return float(np.max(np.abs(rewards + table.gamma * table.q_values.max(axis=1)[nxt] - table.q_values)))


def lift_sample(sample, params):
    """Histogram of lattice states in ``sample``."""
    idx = lattice_indices(params, sample)
    return tuple(int(c) for c in np.bincount(idx, minlength=params.n_states))


def lattice_sample(counts, params):
    idx = np.repeat(np.arange(len(counts)), counts)
    return params.coordinates(idx)


@dataclass
class CompareReport:
    sup_err: float
    mean_err: float
    argmax_agreement: float
    min_action_gap: float

    def as_dict(self):
        return dict(vars(self))


def compare_q(model, table, spec, n_draws=1, seed=0):
    """Grade ``model`` against the oracle over every (histogram, action).

    Queries are the lattice samples of each histogram, passed through the
    environment's observation model when it is noisy or subsampled; then
    ``n_draws`` observations are taken per histogram and the per-configuration
    error is the RMS over draws.  Oracle ties count as agreement for any tied
    action.
    """
    params = spec.params
    if model.support[0].dim != 1:
        raise ContractViolation(f"model has state dimension {model.support[0].dim}; lattice encoding is 1-D")
    if table.q_values.shape[1] != params.n_actions:
        raise ContractViolation("oracle and environment disagree on the number of actions")
    if sum(table.states[0]) != population_size(spec):
        raise ContractViolation("oracle histograms do not match the environment population")
    n_actions = params.n_actions
    noisy = params.obs_noise > 0 or params.population is not None
    draws = n_draws if noisy else 1
    rng = np.random.default_rng(seed)
    queries = []
    for h in table.states:
        base = lattice_sample(h, params)
        for _ in range(draws):
            obs = observe(spec, base, rng) if noisy else base
            queries.extend(Config(a, obs) for a in range(n_actions))
    pred = predict_batch(model, queries).reshape(len(table.states), draws, n_actions)
    q_star = table.q_values[:, None, :]
    err = np.sqrt(np.mean((pred - q_star) ** 2, axis=1))
    tol = 1e-9 * max(table.q_max, 1.0)
    greedy = pred.argmax(axis=-1)
    chosen = np.take_along_axis(np.broadcast_to(q_star, pred.shape), greedy[..., None], axis=-1)[..., 0]
    agree = chosen >= table.q_values.max(axis=1)[:, None] - tol
    sorted_q = np.sort(table.q_values, axis=1)
    gap = float(np.min(sorted_q[:, -1] - sorted_q[:, -2])) if n_actions > 1 else np.inf
    return CompareReport(float(err.max()), float(err.mean()), float(agree.mean()), gap)


def oracle_for(spec, tol=1e-12):
    """Exact table over every histogram of the environment's population."""
    states = enumerate_configs(spec.params, population_size(spec))
    return exact_value_iteration(states, spec.params, spec.gamma, spec.r_max, tol=tol)
