"""Input validation helpers shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_states(S, state_dim: int, name: str = "states") -> np.ndarray:
    S = check_array(S, dtype=np.float64, ensure_2d=True)
    if S.shape[1] != state_dim:
        raise ValueError(f"{name} have {S.shape[1]} columns, expected {state_dim}")
    return S


def check_state_goal(X, state_dim: int, goal_dim: int):
    """Split rows ``[state | goal values]`` into ``(states, goal_values)``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != state_dim + goal_dim:
        raise ValueError(
            f"X has {X.shape[1]} columns, expected state ({state_dim}) + goal ({goal_dim}) = {state_dim + goal_dim}")
    return X[:, :state_dim], X[:, state_dim:]


def check_binary(S, name: str = "states") -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if not np.all((S == 0.0) | (S == 1.0)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return S
