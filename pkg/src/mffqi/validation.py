"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from mffqi.exceptions import ContractViolation


def canonical_states(states):
    """Return an (N, d) float array of agent states sorted lexicographically.

    Sorting fixes the summation order of every Gram sum, which is what makes
    downstream kernel values bit-identical under permutation of the agents.
    The returned array is read-only.
    """
    arr = np.array(states, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ContractViolation(f"agent sample must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractViolation(f"agent sample must be nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("agent sample contains NaN or Inf")
    # lexsort uses the last key as primary
    order = np.lexsort(arr.T[::-1])
    arr = np.ascontiguousarray(arr[order])
    arr.setflags(write=False)
    return arr


def check_action(action, n_actions=None):
    if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
        raise ContractViolation(f"action must be an integer, got {action!r}")
    action = int(action)
    if action < 0 or (n_actions is not None and action >= n_actions):
        raise ContractViolation(f"action {action} outside [0, {n_actions})")
    return action


def check_configs(X, allow_empty=False):
    """Coerce ``X`` to a list of :class:`~mffqi.kernels.Config`.

    Accepts Config instances or ``(action, states)`` pairs and checks that the
    state dimension is uniform.
    """
    from mffqi.kernels import Config

    configs = [c if isinstance(c, Config) else Config(*c) for c in X]
    if not configs and not allow_empty:
        raise ContractViolation("expected at least one configuration")
    dims = {c.dim for c in configs}
    if len(dims) > 1:
        raise ContractViolation(f"mixed state dimensions {sorted(dims)}")
    return configs


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ContractViolation(f"{name} must be a positive finite number, got {value}")
    return value
