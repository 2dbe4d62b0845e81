"""scikit-learn style wrappers around the training harness.

``fit`` runs a full training schedule, ``predict`` maps ``[state | goal]``
rows to greedy actions and ``score`` reports the greedy success rate. The
PQM agent also exposes ``transform`` (aimer target states) and
``quasi_metric``. ``get_params`` / ``set_params`` / ``clone`` work as usual,
so agents can be used in parameter sweeps.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness.agents import evaluate, run_episodes
from .harness.config import make_config
from .harness.training import init_state, train_loop, transfer_state
from .pqm import metric_estimate
from .validation import check_state_goal, check_states


class _AgentBase(BaseEstimator):
    _learner = None

    def _config(self):
        overrides = {}
        for name, value in self.get_params().items():
            if name in ("env", "transfer_from") or value is None:
                continue
            overrides[name] = tuple(value) if name.endswith("_hidden") else value
        overrides["learner"] = self._learner
        return make_config(self.env, **overrides)

    def fit(self, X=None, y=None):
        """Train on the configured environment; ``X`` and ``y`` are ignored."""
        config = self._config()
        if getattr(self, "transfer_from", None):
            state = transfer_state(config.replace(transfer_from=self.transfer_from), self.transfer_from)
        else:
            state = init_state(config)
        train_loop(state)
        self.state_ = state
        self.metrics_ = list(state.metrics)
        self.n_features_in_ = state.env.state_dim + state.task.goal_dim
        return self

    def predict(self, X):
        """Greedy action for every ``[state | goal values]`` row."""
        check_is_fitted(self, "state_")
        st = self.state_
        S, G = check_state_goal(X, st.env.state_dim, st.task.goal_dim)
        return st.learner.act(S, G, None, None, explore=False)

    def score(self, X=None, y=None, n_episodes: int = 100, seed: int = 0):
        """Greedy success rate: on fresh resets, or from the ``[state | goal]`` rows of ``X``."""
        check_is_fitted(self, "state_")
        st = self.state_
        rng = np.random.default_rng(seed)
        if X is None:
            return evaluate(st.learner, st.env, st.task, n_episodes, rng)[0]
        starts = check_state_goal(X, st.env.state_dim, st.task.goal_dim)
        return float(run_episodes(st.learner, st.env, st.task, 0, rng, "greedy", starts=starts).success.mean())


class PQMAgent(_AgentBase):
    """Planning quasi-metric with a task aimer.

    Parameters left as ``None`` take the environment's defaults.
    """

    _learner = "pqm"

    def __init__(self, env="bitflip", bits=12, task=None, epochs=None, seed=0, lambda1=None, lambda2=None,
                 learning_rate=None, batch_size=None, epsilon=None, p_relabel=None, critic_hidden=None,
                 actor_hidden=None, aimer_hidden=None, eval_episodes_per_epoch=None, transfer_from=None):
        self.env = env
        self.bits = bits
        self.task = task
        self.epochs = epochs
        self.seed = seed
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epsilon = epsilon
        self.p_relabel = p_relabel
        self.critic_hidden = critic_hidden
        self.actor_hidden = actor_hidden
        self.aimer_hidden = aimer_hidden
        self.eval_episodes_per_epoch = eval_episodes_per_epoch
        self.transfer_from = transfer_from

    def transform(self, X):
        """Aimer target state ``h(s, g)`` for every ``[state | goal values]`` row."""
        check_is_fitted(self, "state_")
        st = self.state_
        S, G = check_state_goal(X, st.env.state_dim, st.task.goal_dim)
        return st.learner.targets(S, G)

    def quasi_metric(self, S, S2):
        """Estimated steps from each row of ``S`` to the matching row of ``S2``."""
        check_is_fitted(self, "state_")
        st = self.state_
        S = check_states(S, st.env.state_dim)
        S2 = check_states(S2, st.env.state_dim, "targets")
        return metric_estimate(st.learner.critic, st.learner.actor, S, S2)


class DQNAgent(_AgentBase):
    """Goal-conditioned DQN with hindsight relabeling (bit-flip only)."""

    _learner = "dqn"

    def __init__(self, env="bitflip", bits=12, task=None, epochs=None, seed=0, learning_rate=None,
                 batch_size=None, epsilon=None, p_relabel=None, gamma=None, critic_hidden=None,
                 eval_episodes_per_epoch=None):
        self.env = env
        self.bits = bits
        self.task = task
        self.epochs = epochs
        self.seed = seed
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epsilon = epsilon
        self.p_relabel = p_relabel
        self.gamma = gamma
        self.critic_hidden = critic_hidden
        self.eval_episodes_per_epoch = eval_episodes_per_epoch
