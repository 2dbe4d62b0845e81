"""Task-specific aimer ``h(s, g)``: picks the target state inside goal ``g`` closest to ``s``.

The aimer is trained to minimise

    metric(s, h) + lambda1 * d(h, g) + lambda2 * v(h)

where ``metric`` is the frozen quasi-metric (``min_a f`` or ``f`` at the
actor's action), ``d`` the squared masked distance to the goal set and ``v``
the environment's validity penalty.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .envs import Goal, Task
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
)
from .pqm import Actor, Critic
from .replay import ReplayBuffer


@dataclass
class Aimer:
    net: ParameterSet
    optimizer: AdamState
    mask: np.ndarray
    lambda1: float
    lambda2: float = 0.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.lambda1 <= 0 or self.lambda2 < 0:
            raise ValueError("aimer needs lambda1 > 0 and lambda2 >= 0")
        if self.net.n_in != self.mask.size + self.goal_dim or self.net.n_out != self.mask.size:
            raise ValueError("aimer network shape does not match the task mask")

    @property
    def state_dim(self) -> int:
        return self.mask.size

    @property
    def goal_dim(self) -> int:
        return int(self.mask.sum())


def make_aimer(task: Task, hidden: Sequence[int], output_activation: str, lambda1: float, lambda2: float = 0.0,
               seed=0, learning_rate=1e-3) -> Aimer:
    d_s = task.mask.size
    net = mlp_init([d_s + task.goal_dim, *hidden, d_s], "relu", output_activation, seed)
    return Aimer(net, adam_init(net, learning_rate), task.mask.copy(), lambda1, lambda2)


def _goal_values(aimer: Aimer, g) -> np.ndarray:
    if isinstance(g, Goal):
        if not np.array_equal(g.mask, aimer.mask):
            raise ValueError("goal mask does not match the aimer's task")
        return g.values
    return np.asarray(g, dtype=np.float64)


def aimer_predict(aimer: Aimer, s, g) -> np.ndarray:
    """Target state for ``(s, g)``; ``g`` is a Goal or the masked target values (batched or not)."""
    gv = _goal_values(aimer, g)
    x = np.concatenate([np.asarray(s, dtype=np.float64), gv], axis=-1)
    return mlp_forward(aimer.net, x)


def full_targets(mask, goal_values) -> np.ndarray:
    goal_values = np.atleast_2d(goal_values)
    out = np.zeros((goal_values.shape[0], mask.size))
    out[:, mask] = goal_values
    return out


def aimer_objective(critic: Critic, actor: Optional[Actor], env, s, h, goal_values, mask,
                    lambda1: float, lambda2: float):
    """Per-row objective for candidate targets ``h`` and its gradient with respect to ``h``.

    The metric term is differentiated through the frozen critic (at the
    argmin action for a discrete critic) and, for a continuous critic,
    through the frozen actor as well.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    d_s = s.shape[1]
    pair = np.concatenate([s, h], axis=1)
    if critic.kind == "discrete":
        cache = forward_cached(critic.net, pair)
        a = np.argmin(cache.output, axis=1)
        rows = np.arange(len(s))
        metric = cache.output[rows, a]
        cot = np.zeros_like(cache.output)
        cot[rows, a] = 1.0
        d_h = backward_cached(critic.net, cache, cot).input_gradient[:, d_s:]
    else:
        a_cache = forward_cached(actor.net, pair)
        acts = a_cache.output
        c_cache = forward_cached(critic.net, np.concatenate([pair, acts], axis=1))
        metric = c_cache.output[:, 0]
        c_in = backward_cached(critic.net, c_cache, np.ones((len(s), 1))).input_gradient
        d_act = c_in[:, 2 * d_s:]
        via_actor = backward_cached(actor.net, a_cache, d_act).input_gradient[:, d_s:]
        d_h = c_in[:, d_s:2 * d_s] + via_actor
    diff = (h - full_targets(mask, goal_values)) * mask
    dist = np.sum(diff * diff, axis=1)
    pen, pen_grad = env.validity_penalty_and_grad(h)
    value = metric + lambda1 * dist + lambda2 * pen
    grad = d_h + 2.0 * lambda1 * diff + lambda2 * pen_grad
    return value, grad


def aimer_loss_and_grad(aimer: Aimer, critic: Critic, actor: Optional[Actor], states, goal_values, env):
    states = np.asarray(states, dtype=np.float64)
    goal_values = np.asarray(goal_values, dtype=np.float64)
    B = len(states)
    if B == 0:
        raise ValueError("empty batch")
    cache = forward_cached(aimer.net, np.concatenate([states, goal_values], axis=1))
    value, d_h = aimer_objective(critic, actor, env, states, cache.output, goal_values, aimer.mask,
                                 aimer.lambda1, aimer.lambda2)
    loss = float(np.mean(value))
    if not np.isfinite(loss):
        raise DivergenceError("aimer loss is not finite")
    return loss, backward_cached(aimer.net, cache, d_h / B)


def aimer_update(aimer: Aimer, critic: Critic, actor: Optional[Actor], pairs, env) -> float:
    """One Adam step on the aimer; critic and actor are only read."""
    loss, grad = aimer_loss_and_grad(aimer, critic, actor, pairs.states, pairs.goal_values, env)
    aimer.optimizer, aimer.net = adam_step(aimer.optimizer, aimer.net, grad)
    return loss


@dataclass
class AimerPairs:
    states: np.ndarray
    goal_values: np.ndarray
    hindsight: np.ndarray
    episode: np.ndarray
    t: np.ndarray
    t_future: np.ndarray

    def __len__(self):
        return len(self.states)

    def goals(self, task: Task):
        return [task.goal_from_values(v) for v in self.goal_values]


def sample_aimer_pairs(buffer: ReplayBuffer, task: Task, batch_size: int, rng: np.random.Generator,
                       hindsight_fraction: float = 0.5) -> AimerPairs:
    """States from the buffer; goals half from the task sampler, half from future achieved states."""
    flat, ep, t = buffer.sample_skeleton(batch_size, rng)
    hindsight = rng.random(batch_size) < hindsight_fraction
    t_fut = ReplayBuffer.future_index(flat, ep, t, rng)
    fresh = task.sample_values(rng, batch_size)
    achieved = flat.state(ep, t_fut + 1)[:, task.mask]
    values = np.where(hindsight[:, None], achieved, fresh)
    return AimerPairs(flat.state(ep, t), values, hindsight, ep, t, np.where(hindsight, t_fut, -1))
