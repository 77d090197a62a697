"""Kernel ridge regression over mean embeddings.

The regularised least-squares problem over H(K),

    minimise (1/n) sum_i (f(mu_i) - y_i)^2 + lam * ||f||^2,

has the representer solution ``f = sum_i alpha_i K(., mu_i)`` with
``alpha = (G + n lam I)^{-1} y``.  The 1/n factors of the empirical integral
operator and of the data term cancel, so ``lam`` is comparable across batch
sizes.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from mffqi.exceptions import ContractViolation, NumericalError
from mffqi.kernels import GAUSSIAN_MMD, BaseKernel, EmbeddingKernel, cross_gram, median_bandwidth, median_tau
from mffqi.validation import check_configs, check_positive

logger = logging.getLogger(__name__)

_JITTERS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class RidgeProblem:
    gram: np.ndarray
    targets: np.ndarray
    lam: float


def ridge_objective(gram, targets, lam, alpha):
    """Value of the regularised least-squares objective at coefficients ``alpha``."""
    resid = gram @ alpha - targets
    return float(resid @ resid / len(targets) + lam * (alpha @ gram @ alpha))


def fit_krr(problem=None, *, gram=None, targets=None, lam=None, refine=2):
    """Solve ``(G + n lam I) alpha = y`` by Cholesky with jitter fallback.

    Only the lower triangle of ``gram`` is read by the factorisation.  When
    the factorisation fails, a jitter ``eps * trace(G) / n`` is added with
    ``eps`` escalating from 1e-12 to 1e-6 before giving up with
    :class:`NumericalError`.
    """
    if problem is not None:
        gram, targets, lam = problem.gram, problem.targets, problem.lam
    G = np.asarray(gram, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    lam = check_positive(lam, "lam")
    n = len(y)
    if G.shape != (n, n):
        raise ContractViolation(f"gram shape {G.shape} does not match {n} targets")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(y))):
        raise ContractViolation("gram and targets must be finite")

    A = G + (n * lam) * np.eye(n)
    scale = max(float(np.trace(G)) / n, np.finfo(float).tiny)
    tried = [0.0]
    factor = _cholesky(A)
    for eps in _JITTERS:
        if factor is not None:
            break
        tried.append(eps)
        logger.debug("cholesky failed, retrying with jitter %g", eps)
        A = G + (n * lam + eps * scale) * np.eye(n)
        factor = _cholesky(A)
    if factor is None:
        raise NumericalError(
            "kernel ridge system not positive definite after jitter escalation",
            {"n": n, "lam": lam, "trace": float(np.trace(G)), "jitters": tried},
        )
    alpha = linalg.cho_solve(factor, y)
    for _ in range(refine):
        alpha = alpha + linalg.cho_solve(factor, y - A @ alpha)
    return alpha


def _cholesky(A):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


@dataclass(frozen=True, eq=False)
class QModel:
    """A fitted representer expansion with optional truncation at ``q_max``."""

    support: tuple
    alpha: np.ndarray
    base: BaseKernel
    emb: EmbeddingKernel
    q_max: float = np.inf
    truncated: bool = True
    symmetric_clamp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(check_configs(self.support)))
        alpha = np.array(self.alpha, dtype=np.float64).ravel()
        if len(alpha) != len(self.support):
            raise ContractViolation(f"{len(alpha)} coefficients for {len(self.support)} support configs")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def zero(cls, support, base, emb, q_max=np.inf):
        return cls(support, np.zeros(len(support)), base, emb, q_max)

    def raw(self):
        return replace(self, truncated=False, symmetric_clamp=False)


def predict_batch(model, queries, cache=None):
    """Predictions at ``queries``; ``cache`` is the (n_support, n_queries) cross-Gram."""
    queries = check_configs(queries, allow_empty=True)
    if not queries:
        return np.empty(0)
    if queries[0].dim != model.support[0].dim:
        raise ContractViolation(f"query dimension {queries[0].dim} != model dimension {model.support[0].dim}")
    expected = (len(model.support), len(queries))
    if cache is None:
        cache = cross_gram(model.support, queries, model.base, model.emb)
    elif cache.shape != expected:
        raise ContractViolation(f"cache shape {cache.shape} != {expected}")
    return _combine(model, cache)


def _combine(model, cache):
    # row-wise contiguous sums keep each prediction independent of the batch size
    terms = np.ascontiguousarray(cache.T * model.alpha)
    raw = terms.sum(axis=-1)
    if model.truncated:
        raw = np.minimum(raw, model.q_max)
        if model.symmetric_clamp:
            raw = np.maximum(raw, -model.q_max)
    return raw


def predict(model, query):
    return float(predict_batch(model, [query])[0])


class MeanEmbeddingRidge(RegressorMixin, BaseEstimator):
    """Distribution regression with kernel ridge on mean embeddings.

    ``X`` is a sequence of :class:`~mffqi.kernels.Config` (or ``(action,
    states)`` pairs).  ``bandwidth`` and ``tau`` default to median heuristics
    computed on the training configs.

    Parameters
    ----------
    lam : float
        Ridge penalty.
    bandwidth : float or None
        Base kernel bandwidth.
    embedding_kernel : {"gaussian_mmd", "linear"}
    tau : float or None
        Length scale of the Gaussian kernel on MMD.
    q_max : float or None
        If given, predictions are truncated from above at this value.
    """

    def __init__(self, lam=1e-3, bandwidth=None, embedding_kernel=GAUSSIAN_MMD, tau=None, q_max=None):
        self.lam = lam
        self.bandwidth = bandwidth
        self.embedding_kernel = embedding_kernel
        self.tau = tau
        self.q_max = q_max

    def fit(self, X, y):
        X = check_configs(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if len(y) != len(X):
            raise ContractViolation(f"{len(X)} configs but {len(y)} targets")
        base, emb = resolve_kernels(X, self.bandwidth, self.embedding_kernel, self.tau)
        gram = cross_gram(X, X, base, emb)
        alpha = fit_krr(gram=gram, targets=y, lam=self.lam)
        q_max = np.inf if self.q_max is None else float(self.q_max)
        self.model_ = QModel(X, alpha, base, emb, q_max, truncated=self.q_max is not None)
        self.n_features_in_ = X[0].dim
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict_batch(self.model_, X)


def resolve_kernels(configs, bandwidth, variant, tau):
    """Fill in median-heuristic defaults for unset kernel parameters."""
    if bandwidth is None:
        bandwidth = median_bandwidth([c.states for c in configs])
    base = BaseKernel(bandwidth)
    if variant == GAUSSIAN_MMD and tau is None:
        tau = median_tau(configs, base)
    emb = EmbeddingKernel(variant, 1.0 if tau is None else tau)
    return base, emb
