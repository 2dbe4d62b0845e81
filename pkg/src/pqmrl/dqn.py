"""Goal-conditioned DQN baseline trained on hindsight-relabeled transitions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import Goal
from .nn import (
    AdamState,
    DivergenceError,
    ParameterSet,
    adam_init,
    adam_step,
    backward_cached,
    forward_cached,
    mlp_forward,
    mlp_init,
    polyak_update,
)

DEFAULT_GAMMA = 0.98


@dataclass
class QNetwork:
    net: ParameterSet
    target_net: ParameterSet
    optimizer: AdamState
    mask: np.ndarray
    horizon: int

    def polyak(self, decay):
        self.target_net = polyak_update(self.target_net, self.net, decay)


def make_qnetwork(mask, n_actions: int, hidden: Sequence[int], horizon: int, seed=0, learning_rate=1e-3) -> QNetwork:
    mask = np.asarray(mask, dtype=bool)
    net = mlp_init([mask.size + int(mask.sum()), *hidden, n_actions], "relu", "linear", seed)
    return QNetwork(net, net.copy(), adam_init(net, learning_rate), mask, int(horizon))


def _inputs(qnet: QNetwork, s, g):
    if isinstance(g, Goal):
        g = g.values
    return np.concatenate([np.asarray(s, dtype=np.float64), np.asarray(g, dtype=np.float64)], axis=-1)


def q_values(qnet: QNetwork, s, g, target: bool = False) -> np.ndarray:
    """``Q(s, g, .)``; ``g`` is a Goal or masked target values, single or batched."""
    return mlp_forward(qnet.target_net if target else qnet.net, _inputs(qnet, s, g))


def dqn_targets(qnet: QNetwork, reward, s_next, goal_values, done, gamma=DEFAULT_GAMMA) -> np.ndarray:
    """``r + gamma * max_a Q~(s', g, a) * (1 - done)`` clipped to ``[-horizon, 0]``."""
    q_next = q_values(qnet, s_next, goal_values, target=True).max(axis=-1)
    y = np.asarray(reward, dtype=np.float64) + gamma * q_next * (1.0 - np.asarray(done, dtype=np.float64))
    return np.clip(y, -float(qnet.horizon), 0.0)


def dqn_update(qnet: QNetwork, batch, gamma: float = DEFAULT_GAMMA) -> float:
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    gv = batch.goal_values
    y = dqn_targets(qnet, batch.reward, batch.s_next, gv, batch.done, gamma)
    cache = forward_cached(qnet.net, _inputs(qnet, batch.s_t, gv))
    rows = np.arange(B)
    a = np.asarray(batch.a_t, dtype=np.int64)
    q = cache.output[rows, a]
    loss = float(np.mean((q - y) ** 2))
    if not np.isfinite(loss):
        raise DivergenceError("DQN loss is not finite")
    cot = np.zeros_like(cache.output)
    cot[rows, a] = 2.0 * (q - y) / B
    grad = backward_cached(qnet.net, cache, cot)
    qnet.optimizer, qnet.net = adam_step(qnet.optimizer, qnet.net, grad)
    return loss


def dqn_act(qnet: QNetwork, s, g, epsilon: float, rng: np.random.Generator):
    """Epsilon-greedy argmax, lowest index on ties; batched when ``s`` is 2-d."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = q_values(qnet, s, g)
    greedy = np.argmax(q, axis=-1)
    if epsilon == 0.0:
        return greedy
    shape = np.shape(greedy)
    rand = rng.integers(0, q.shape[-1], size=shape)
    return np.where(rng.random(shape) < epsilon, rand, greedy)
