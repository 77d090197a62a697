"""Mean-field fitted Q-iteration over a fixed batch of transitions.

Each iteration builds bootstrapped targets
``y_i = r_i + gamma * max_a Qhat_k(a, next_sample_i)``, refits a kernel ridge
regression on the batch configurations ``(a_i, sample_i)`` and truncates the
result at ``q_max = r_max / (1 - gamma)``.  All Gram matrices are computed once
before the loop; only the coefficient vector changes between iterations.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from mffqi.exceptions import ContractViolation
from mffqi.kernels import GAUSSIAN_MMD, Config, cross_gram
from mffqi.regression import QModel, fit_krr, predict_batch, resolve_kernels
from mffqi.validation import canonical_states, check_action, check_configs, check_positive


@dataclass(frozen=True, eq=False)
class TransitionRecord:
    sample: np.ndarray
    action: int
    reward: float
    next_sample: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample", canonical_states(self.sample))
        object.__setattr__(self, "next_sample", canonical_states(self.next_sample))
        object.__setattr__(self, "action", check_action(self.action))
        object.__setattr__(self, "reward", float(self.reward))
        if self.sample.shape != self.next_sample.shape:
            raise ContractViolation(f"sample shape {self.sample.shape} != next sample shape {self.next_sample.shape}")
        if not np.isfinite(self.reward):
            raise ContractViolation("reward must be finite")


@dataclass(frozen=True, eq=False)
class Batch:
    """``n`` transition records plus the reward bound and discount."""

    records: tuple
    r_max: float
    gamma: float
    n_actions: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ContractViolation("batch must contain at least one record")
        shapes = {r.sample.shape for r in records}
        if len(shapes) > 1:
            raise ContractViolation(f"non-uniform agent samples in batch: {sorted(shapes)}")
        check_positive(self.r_max, "r_max")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractViolation(f"gamma must lie in [0, 1), got {self.gamma}")
        rewards = np.array([r.reward for r in records])
        if np.any(rewards > self.r_max):
            raise ContractViolation(f"reward {rewards.max()} exceeds r_max {self.r_max}")
        n_actions = self.n_actions
        top = max(r.action for r in records) + 1
        if n_actions is None:
            n_actions = top
        elif top > n_actions:
            raise ContractViolation(f"action {top - 1} outside [0, {n_actions})")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "n_actions", int(n_actions))

    def __len__(self):
        return len(self.records)

    @property
    def q_max(self):
        return self.r_max / (1.0 - self.gamma)

    @property
    def n_agents(self):
        return self.records[0].sample.shape[0]

    @property
    def dim(self):
        return self.records[0].sample.shape[1]

    @property
    def rewards(self):
        return np.array([r.reward for r in self.records])

    def support_configs(self):
        return [Config(r.action, r.sample) for r in self.records]

    def next_configs(self, action):
        return [Config(action, r.next_sample) for r in self.records]


@dataclass(frozen=True)
class FqiConfig:
    """Iteration count, ridge penalty, kernel choices and initial Q value.

    ``bandwidth`` and ``tau`` left as ``None`` are set by median heuristics on
    the batch.  ``initial_q`` is the constant value of the starting Q-function.
    """

    kappa: int = 50
    lam: float = 1e-6
    bandwidth: float = None
    embedding_kernel: str = GAUSSIAN_MMD
    tau: float = None
    initial_q: float = 0.0

    def __post_init__(self):
        if int(self.kappa) != self.kappa or self.kappa < 0:
            raise ContractViolation(f"kappa must be a nonnegative integer, got {self.kappa}")
        check_positive(self.lam, "lam")


@dataclass(frozen=True)
class GreedyPolicy:
    model: QModel
    n_actions: int

    def __call__(self, sample):
        return greedy_action(self, sample)


@dataclass
class Diagnostics:
    """Per-iteration records of a run.

    ``residuals[k]`` is the mean squared gap between the model fitted at
    iteration ``k + 1`` and the targets it was fitted on.  ``target_deltas``
    and ``query_deltas`` are sup-norm changes of consecutive target vectors
    and of consecutive next-state predictions.  ``timings`` is the only field
    that varies between identical runs.
    """

    base: object
    emb: object
    residuals: list = field(default_factory=list)
    target_deltas: list = field(default_factory=list)
    query_deltas: list = field(default_factory=list)
    history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _next_values(batch, q, caches=None):
    """(n_actions, n) matrix of truncated predictions at next-state configs."""
    if not isinstance(q, QModel):
        c = min(float(q), batch.q_max)
        return np.full((batch.n_actions, len(batch)), c)
    rows = []
    for a in range(batch.n_actions):
        cache = None if caches is None else caches[a]
        rows.append(predict_batch(q, batch.next_configs(a), cache=cache))
    return np.vstack(rows)


def compute_targets(batch, q, caches=None):
    """Bootstrapped targets ``r_i + gamma * max_a q(a, next_sample_i)``.

    ``q`` is a truncated :class:`QModel` or a constant.  ``caches[a]`` is the
    (n_support, n) cross-Gram between the model support and next-state configs
    under action ``a``.
    """
    if caches is not None and len(caches) != batch.n_actions:
        raise ContractViolation(f"{len(caches)} caches for {batch.n_actions} actions")
    return batch.rewards + batch.gamma * _next_values(batch, q, caches).max(axis=0)


def fqi_step(batch, q_prev, cfg, gram, base, emb, caches=None):
    """One regression refit on fresh targets; returns the new truncated model."""
    targets = compute_targets(batch, q_prev, caches)
    alpha = fit_krr(gram=gram, targets=targets, lam=cfg.lam)
    return QModel(batch.support_configs(), alpha, base, emb, batch.q_max)


def run_mffqi(batch, cfg, use_cache=True, keep_history=False):
    """Run ``cfg.kappa`` iterations from the constant ``cfg.initial_q``.

    Returns ``(model, policy, diagnostics)``.  With ``use_cache=False`` every
    Gram matrix is rebuilt inside each iteration; outputs are identical.
    """
    t_start = time.perf_counter()
    support = batch.support_configs()
    base, emb = resolve_kernels(support, cfg.bandwidth, cfg.embedding_kernel, cfg.tau)
    diag = Diagnostics(base, emb)

    t0 = time.perf_counter()
    gram = cross_gram(support, support, base, emb) if use_cache else None
    caches = [cross_gram(support, batch.next_configs(a), base, emb) for a in range(batch.n_actions)] if use_cache else None
    diag.timings["gram_seconds"] = time.perf_counter() - t0

    q = float(cfg.initial_q)
    prev_targets = prev_values = None
    for _ in range(cfg.kappa):
        g = gram if use_cache else cross_gram(support, support, base, emb)
        values = _next_values(batch, q, caches)
        targets = batch.rewards + batch.gamma * values.max(axis=0)
        alpha = fit_krr(gram=g, targets=targets, lam=cfg.lam)
        q = QModel(support, alpha, base, emb, batch.q_max)
        fitted = predict_batch(q, support, cache=g)
        diag.residuals.append(float(np.mean((fitted - targets) ** 2)))
        if prev_targets is not None:
            diag.target_deltas.append(float(np.max(np.abs(targets - prev_targets))))
            diag.query_deltas.append(float(np.max(np.abs(values - prev_values))))
        prev_targets, prev_values = targets, values
        if keep_history:
            diag.history.append(alpha)

    if not isinstance(q, QModel):
        # kappa == 0: only the zero start has a kernel representation
        if cfg.initial_q:
            raise ContractViolation("kappa=0 with a nonzero initial_q has no kernel representation")
        q = QModel.zero(support, base, emb, batch.q_max)
    diag.timings["total_seconds"] = time.perf_counter() - t_start
    return q, GreedyPolicy(q, batch.n_actions), diag


def greedy_action(policy, sample):
    """Action with the largest predicted value; ties go to the lowest index."""
    states = canonical_states(sample)
    values = predict_batch(policy.model, [Config(a, states) for a in range(policy.n_actions)])
    return int(np.argmax(values))


def bellman_residual(q, batch):
    """Root mean squared empirical Bellman error of ``q`` on ``batch``."""
    fitted = predict_batch(q, batch.support_configs())
    return float(np.sqrt(np.mean((fitted - compute_targets(batch, q)) ** 2)))


class MeanFieldFQI(BaseEstimator):
    """Fitted Q-iteration estimator on mean-field transition batches.

    ``fit`` takes a :class:`Batch`; afterwards ``predict`` returns Q-values at
    configurations and ``predict_action`` the greedy action for agent samples.

    Parameters
    ----------
    kappa : int
        Number of iterations.
    lam : float
        Ridge penalty, held constant across iterations.
    bandwidth, tau : float or None
        Kernel length scales; ``None`` selects median heuristics.
    embedding_kernel : {"gaussian_mmd", "linear"}
    initial_q : float
        Constant starting Q-function.
    use_cache : bool
        Precompute Gram matrices once instead of per iteration.
    """

    def __init__(self, kappa=50, lam=1e-6, bandwidth=None, embedding_kernel=GAUSSIAN_MMD, tau=None,
                 initial_q=0.0, use_cache=True):
        self.kappa = kappa
        self.lam = lam
        self.bandwidth = bandwidth
        self.embedding_kernel = embedding_kernel
        self.tau = tau
        self.initial_q = initial_q
        self.use_cache = use_cache

    def _config(self):
        return FqiConfig(self.kappa, self.lam, self.bandwidth, self.embedding_kernel, self.tau, self.initial_q)

    def fit(self, X, y=None):
        if not isinstance(X, Batch):
            raise ContractViolation(f"expected a Batch, got {type(X).__name__}")
        self.model_, self.policy_, self.diagnostics_ = run_mffqi(X, self._config(), use_cache=self.use_cache)
        self.n_actions_ = X.n_actions
        self.n_features_in_ = X.dim
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_batch(self.model_, check_configs(X))

    def predict_action(self, samples):
        check_is_fitted(self, "policy_")
        return np.array([greedy_action(self.policy_, s) for s in samples], dtype=int)

    def score(self, X, y=None):
        """Negative empirical Bellman residual on ``X`` (higher is better)."""
        check_is_fitted(self, "model_")
        return -bellman_residual(self.model_, X)
