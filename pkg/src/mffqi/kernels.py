r"""Two-level kernels on empirical mean-field configurations.

A configuration pairs one central action ``a`` with a bag of ``N`` agent
states.  The base kernel on individual state-action pairs is

.. math::
    k((a, s), (a', s')) = \mathbb{1}\{a = a'\}\exp(-\|s - s'\|^2 / 2\sigma^2),

so ``k(u, u) = 1``.  The empirical mean embedding of a configuration is the
average of kernel sections over its agents, and every quantity on embeddings
(inner products, squared MMD, the second-level kernel ``K``) reduces to Gram
sums over the raw agent states.  No feature vectors are ever materialised.

Per-entry sums depend only on the two samples involved, never on how many
other entries are computed alongside them, so batched and element-wise
evaluation agree to the last bit.
"""

from dataclasses import dataclass, field

import numpy as np

from mffqi.exceptions import ContractViolation
from mffqi.validation import canonical_states, check_action, check_configs, check_positive

LINEAR = "linear"
GAUSSIAN_MMD = "gaussian_mmd"

# elements per (points x cols x agents) block in the Gram sums
_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True, eq=False)
class Config:
    """One central action and a canonicalised sample of agent states."""

    action: int
    states: np.ndarray
    _self_inner: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "action", check_action(self.action))
        object.__setattr__(self, "states", canonical_states(self.states))

    @property
    def n_agents(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    def with_action(self, action):
        return Config(action, self.states)


@dataclass(frozen=True)
class BaseKernel:
    """Action-delta times Gaussian RBF on individual states."""

    bandwidth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bandwidth", check_positive(self.bandwidth, "bandwidth"))

    # k(u, u) for every u
    rho = 1.0

    def to_dict(self):
        return {"bandwidth": self.bandwidth}


@dataclass(frozen=True)
class EmbeddingKernel:
    """Second-level kernel K on mean embeddings.

    ``linear`` is the RKHS inner product of the embeddings; ``gaussian_mmd``
    is ``exp(-mmd^2 / (2 tau^2))``.
    """

    variant: str = GAUSSIAN_MMD
    tau: float = 1.0

    def __post_init__(self):
        if self.variant not in (LINEAR, GAUSSIAN_MMD):
            raise ContractViolation(f"unknown embedding kernel variant {self.variant!r}")
        if self.variant == GAUSSIAN_MMD:
            object.__setattr__(self, "tau", check_positive(self.tau, "tau"))

    @property
    def bound(self):
        """Upper bound on K(mu, mu) given a base kernel with k(u, u) <= 1."""
        return 1.0

    @property
    def holder_constants(self):
        """``(L, h)`` with ``||K(., x) - K(., y)|| <= L * ||x - y||^h``."""
        if self.variant == LINEAR:
            return 1.0, 1.0
        return 1.0 / self.tau, 1.0

    def to_dict(self):
        return {"variant": self.variant, "tau": self.tau}


def base_kernel_eval(x, y, base):
    """Evaluate k on two ``(action, state)`` pairs."""
    (a, s), (b, t) = x, y
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if s.shape != t.shape:
        raise ContractViolation(f"state dimensions differ: {s.shape} vs {t.shape}")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise ContractViolation("states must be finite")
    if check_action(a) != check_action(b):
        return 0.0
    return float(_pair_sums(s.reshape(1, 1, -1), t.reshape(1, 1, -1), base.bandwidth)[0, 0])


def _pair_sums(X, Y, bandwidth):
    """Symmetrised Gram sums: the mean of both accumulation orders.

    ``_row_first(Y, X).T`` is the same double sum accumulated over ``p`` first.
    Averaging the two orders makes entry (i, j) for ``(X, Y)`` bit-identical
    to entry (j, i) for ``(Y, X)``.
    """
    if X is Y:
        S = _row_first(X, X, bandwidth)
        return (S + S.T) * 0.5
    return (_row_first(X, Y, bandwidth) + _row_first(Y, X, bandwidth).T) * 0.5


def _row_first(X, Y, bandwidth):
    """Unnormalised Gram sums between stacked samples.

    ``X`` has shape (r, N, d), ``Y`` shape (c, M, d).  Entry (i, j) is
    ``sum_{p, q} exp(-|X[i, p] - Y[j, q]|^2 / 2 bw^2)``, accumulated over ``q``
    first and then over ``p``, each along a contiguous last axis.
    """
    r, n, d = X.shape
    c, m, _ = Y.shape
    scale = -0.5 / (bandwidth * bandwidth)
    points = X.reshape(r * n, d)
    per_point = np.empty((r * n, c))
    col_step = max(1, _BLOCK_ELEMENTS // m)
    for c0 in range(0, c, col_step):
        Yc = Y[c0:c0 + col_step]
        width = Yc.shape[0]
        row_step = max(1, _BLOCK_ELEMENTS // (width * m))
        for p0 in range(0, r * n, row_step):
            P = points[p0:p0 + row_step]
            sq = np.zeros((P.shape[0], width, m))
            for k in range(d):
                diff = P[:, k, None, None] - Yc[None, :, :, k]
                diff *= diff
                sq += diff
            sq *= scale
            np.exp(sq, out=sq)
            per_point[p0:p0 + row_step, c0:c0 + width] = sq.sum(axis=-1)
    per_point = np.ascontiguousarray(per_point.reshape(r, n, c).transpose(0, 2, 1))
    return per_point.sum(axis=-1)


def _groups(configs):
    groups = {}
    for i, cfg in enumerate(configs):
        groups.setdefault((cfg.action, cfg.n_agents), []).append(i)
    return groups


def inner_matrix(rows, cols, base):
    """Matrix of embedding inner products ``<mu_row, mu_col>`` in H(k)."""
    out = np.zeros((len(rows), len(cols)))
    row_groups, col_groups = _groups(rows), _groups(cols)
    stacks = {}

    def stack(configs, key, idx):
        if (id(configs), key) not in stacks:
            stacks[id(configs), key] = np.stack([configs[i].states for i in idx])
        return stacks[id(configs), key]

    square = {}
    for (action, n), ri in row_groups.items():
        X = stack(rows, (action, n), ri)
        for (col_action, m), ci in col_groups.items():
            if col_action != action:
                continue
            Y = stack(cols, (col_action, m), ci)
            if rows is cols:
                # each ordered block is one accumulation order of its mirror
                square[action, n, m] = (ri, ci, _row_first(X, Y, base.bandwidth))
            else:
                out[np.ix_(ri, ci)] = _pair_sums(X, Y, base.bandwidth) / float(n * m)
    for (action, n, m), (ri, ci, S) in square.items():
        out[np.ix_(ri, ci)] = (S + square[action, m, n][2].T) * 0.5 / float(n * m)
    return out


def self_inner(configs, base):
    """Vector of ``<mu_c, mu_c>``, memoised on each config per bandwidth."""
    out = np.empty(len(configs))
    for i, cfg in enumerate(configs):
        val = cfg._self_inner.get(base.bandwidth)
        if val is None:
            X = cfg.states[None]
            val = float(_pair_sums(X, X, base.bandwidth)[0, 0] / float(cfg.n_agents * cfg.n_agents))
            cfg._self_inner[base.bandwidth] = val
        out[i] = val
    return out


def mmd_sq_matrix(rows, cols, base):
    inner = inner_matrix(rows, cols, base)
    mmd = (self_inner(rows, base)[:, None] + self_inner(cols, base)[None, :]) - 2.0 * inner
    np.maximum(mmd, 0.0, out=mmd)
    return mmd


def cross_gram(rows, cols, base, emb):
    """Matrix ``K(mu_row, mu_col)`` for all pairs."""
    same = rows is cols
    rows = check_configs(rows)
    cols = rows if same else check_configs(cols)
    if rows[0].dim != cols[0].dim:
        raise ContractViolation(f"state dimensions differ: {rows[0].dim} vs {cols[0].dim}")
    if emb.variant == LINEAR:
        return inner_matrix(rows, cols, base)
    mmd = mmd_sq_matrix(rows, cols, base)
    return np.exp(mmd * (-0.5 / (emb.tau * emb.tau)))


def embedding_inner(A, B, base):
    A, B = check_configs([A, B])
    return float(inner_matrix([A], [B], base)[0, 0])


def mmd_sq(A, B, base):
    A, B = check_configs([A, B])
    return float(mmd_sq_matrix([A], [B], base)[0, 0])


def embedding_kernel_eval(A, B, base, emb):
    return float(cross_gram([A], [B], base, emb)[0, 0])


def median_bandwidth(samples, max_points=2000):
    """Median pairwise distance between pooled agent states.

    Falls back to the median positive distance when more than half the
    pairs coincide (lattice data), and to 1.0 when every state is identical.
    """
    pts = np.concatenate([np.asarray(s, dtype=np.float64).reshape(len(s), -1) for s in samples])
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).astype(int)]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))[np.triu_indices(len(pts), k=1)]
    if dist.size == 0:
        return 1.0
    med = float(np.median(dist))
    if med > 0:
        return med
    pos = dist[dist > 0]
    return float(np.median(pos)) if pos.size else 1.0


def median_tau(configs, base, max_configs=200):
    """Median pairwise MMD between configurations (the default ``tau``)."""
    configs = check_configs(configs)
    if len(configs) > max_configs:
        idx = np.linspace(0, len(configs) - 1, max_configs).astype(int)
        configs = [configs[i] for i in idx]
    mmd = np.sqrt(mmd_sq_matrix(configs, configs, base)[np.triu_indices(len(configs), k=1)])
    pos = mmd[mmd > 0]
    return float(np.median(pos)) if pos.size else 1.0
