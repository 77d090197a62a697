"""Mean-field fitted Q-iteration with kernel mean embeddings."""

from mffqi.envs import DiscreteChainParams, EnvSpec, GaussianDriftParams, collect_batch, reference_chain
from mffqi.exceptions import ConfigurationError, ContractViolation, NumericalError, UnsupportedConfiguration
from mffqi.fqi import (Batch, FqiConfig, GreedyPolicy, MeanFieldFQI, TransitionRecord, bellman_residual,
                       greedy_action, run_mffqi)
from mffqi.kernels import BaseKernel, Config, EmbeddingKernel, embedding_inner, embedding_kernel_eval, mmd_sq
from mffqi.oracle import compare_q, exact_value_iteration, oracle_for
from mffqi.regression import MeanEmbeddingRidge, QModel, fit_krr, predict, predict_batch

__version__ = "0.1.0"

__all__ = [
    "Batch", "BaseKernel", "Config", "ConfigurationError", "ContractViolation", "DiscreteChainParams",
    "EmbeddingKernel", "EnvSpec", "FqiConfig", "GaussianDriftParams", "GreedyPolicy", "MeanEmbeddingRidge",
    "MeanFieldFQI", "NumericalError", "QModel", "TransitionRecord", "UnsupportedConfiguration",
    "bellman_residual", "collect_batch", "compare_q", "embedding_inner", "embedding_kernel_eval",
    "exact_value_iteration", "fit_krr", "greedy_action", "mmd_sq", "oracle_for", "predict", "predict_batch",
    "reference_chain", "run_mffqi",
]
