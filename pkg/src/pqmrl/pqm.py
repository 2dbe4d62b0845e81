"""Planning quasi-metric critic ``f(s, s', a)`` and the continuous actor ``a(s, s')``.

``f`` estimates the minimum number of steps to go from ``s`` to ``s'`` when
the first action is ``a``. With a finite action set the critic has one output
per action and the actor is an explicit argmin; with continuous actions the
critic takes the action as input and a tanh actor approximates the argmin.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

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


@dataclass
class ExplorationSpec:
    epsilon: float = 0.2
    gaussian_sigma: float = 0.2
    random_action_prob: float = 0.3

    def __post_init__(self):
        for name in ("epsilon", "random_action_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be non-negative")


@dataclass
class Critic:
    kind: str  # "discrete" or "continuous"
    net: ParameterSet
    target_net: ParameterSet
    optimizer: AdamState
    state_dim: int
    action_dim: int  # number of actions (discrete) or action dimension (continuous)
    clamp_max: float

    def polyak(self, decay):
        self.target_net = polyak_update(self.target_net, self.net, decay)


@dataclass
class Actor:
    net: ParameterSet
    target_net: ParameterSet
    optimizer: AdamState
    preactivation_weight: float = 1.0

    def polyak(self, decay):
        self.target_net = polyak_update(self.target_net, self.net, decay)


def make_critic(kind, state_dim, action_dim, hidden: Sequence[int], clamp_max, seed=0, learning_rate=1e-3) -> Critic:
    if kind == "discrete":
        sizes = [2 * state_dim, *hidden, action_dim]
    elif kind == "continuous":
        sizes = [2 * state_dim + action_dim, *hidden, 1]
    else:
        raise ValueError(f"unknown critic kind {kind!r}")
    net = mlp_init(sizes, "relu", "linear", seed)
    return Critic(kind, net, net.copy(), adam_init(net, learning_rate), state_dim, action_dim, float(clamp_max))


def make_actor(state_dim, action_dim, hidden: Sequence[int], seed=0, learning_rate=1e-3,
               preactivation_weight=1.0) -> Actor:
    net = mlp_init([2 * state_dim, *hidden, action_dim], "relu", "tanh", seed)
    return Actor(net, net.copy(), adam_init(net, learning_rate), preactivation_weight)


def _pair(s, s2):
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s.shape != s2.shape:
        raise ValueError(f"state shapes differ: {s.shape} vs {s2.shape}")
    return np.concatenate([s, s2], axis=-1)


def critic_values_discrete(critic: Critic, s, s2, target: bool = False) -> np.ndarray:
    """``f(s, s', a)`` for every action; works on single pairs or batches."""
    if critic.kind != "discrete":
        raise ValueError("critic_values_discrete needs a discrete critic")
    return mlp_forward(critic.target_net if target else critic.net, _pair(s, s2))


def critic_value_continuous(critic: Critic, s, s2, a, target: bool = False):
    if critic.kind != "continuous":
        raise ValueError("critic_value_continuous needs a continuous critic")
    x = np.concatenate([_pair(s, s2), np.asarray(a, dtype=np.float64)], axis=-1)
    out = mlp_forward(critic.target_net if target else critic.net, x)
    return out[..., 0]


def actor_forward(actor: Actor, s, s2, target: bool = False) -> np.ndarray:
    return mlp_forward(actor.target_net if target else actor.net, _pair(s, s2))


def greedy_action(critic: Critic, actor: Optional[Actor], s, s2):
    """Argmin action (lowest index on ties) or the actor's output."""
    if critic.kind == "discrete":
        return np.argmin(critic_values_discrete(critic, s, s2), axis=-1)
    return actor_forward(actor, s, s2)


def metric_estimate(critic: Critic, actor: Optional[Actor], s, s2, target: bool = False):
    """``min_a f(s, s', a)``, or ``f(s, s', a(s, s'))`` with a continuous actor."""
    if critic.kind == "discrete":
        return critic_values_discrete(critic, s, s2, target).min(axis=-1)
    a = actor_forward(actor, s, s2, target)
    return critic_value_continuous(critic, s, s2, a, target)


def explore_action(spec: ExplorationSpec, critic: Critic, actor: Optional[Actor], s, s2, rng: np.random.Generator):
    """Epsilon-greedy (discrete) or Gaussian-plus-random (continuous) action; batched if ``s`` is 2-d."""
    s = np.asarray(s, dtype=np.float64)
    batched = s.ndim == 2
    S, S2 = (s, np.asarray(s2)) if batched else (s[None], np.asarray(s2)[None])
    n = len(S)
    greedy = greedy_action(critic, actor, S, S2)
    if critic.kind == "discrete":
        rand = rng.integers(0, critic.action_dim, size=n)
        out = np.where(rng.random(n) < spec.epsilon, rand, greedy)
    else:
        noisy = np.clip(greedy + spec.gaussian_sigma * rng.standard_normal(greedy.shape), -1.0, 1.0)
        rand = rng.uniform(-1.0, 1.0, size=greedy.shape)
        out = np.where((rng.random(n) < spec.random_action_prob)[:, None], rand, noisy)
    return out if batched else out[0]


def bellman_target(critic: Critic, actor: Optional[Actor], s_next, s_prime) -> np.ndarray:
    """``clip(1 + f~(s_{t+1}, s', a~), 0, clamp_max)`` from target networks only.

    The remaining distance is 0 when ``s_{t+1}`` already equals ``s'``.
    """
    remaining = metric_estimate(critic, actor, s_next, s_prime, target=True)
    arrived = np.all(np.asarray(s_next) == np.asarray(s_prime), axis=-1)
    remaining = np.where(arrived, 0.0, remaining)
    return np.clip(1.0 + remaining, 0.0, critic.clamp_max)


def critic_loss_and_grad(critic: Critic, actor: Optional[Actor], batch):
    s_t, s_next, s_prime = batch.s_t, batch.s_next, batch.s_prime
    B = len(s_t)
    if B == 0:
        raise ValueError("empty batch")
    y = bellman_target(critic, actor, s_next, s_prime)
    if critic.kind == "discrete":
        a = np.asarray(batch.a_t, dtype=np.int64)
        x = np.concatenate([_pair(s_t, s_next), _pair(s_t, s_prime)])
        cache = forward_cached(critic.net, x)
        rows = np.arange(B)
        f_step = cache.output[rows, a]
        f_far = cache.output[B + rows, a]
        cot = np.zeros_like(cache.output)
        cot[rows, a] = 2.0 * (f_step - 1.0) / B
        cot[B + rows, a] = 2.0 * (f_far - y) / B
    else:
        a = np.asarray(batch.a_t, dtype=np.float64)
        x = np.concatenate([
            np.concatenate([_pair(s_t, s_next), a], axis=1),
            np.concatenate([_pair(s_t, s_prime), a], axis=1),
        ])
        cache = forward_cached(critic.net, x)
        f_step = cache.output[:B, 0]
        f_far = cache.output[B:, 0]
        cot = np.zeros_like(cache.output)
        cot[:B, 0] = 2.0 * (f_step - 1.0) / B
        cot[B:, 0] = 2.0 * (f_far - y) / B
    loss = float(np.mean((f_step - 1.0) ** 2 + (f_far - y) ** 2))
    if not np.isfinite(loss):
        raise DivergenceError("critic loss is not finite")
    return loss, backward_cached(critic.net, cache, cot)


def critic_update(critic: Critic, actor: Optional[Actor], batch) -> float:
    """One Adam step on the critic; returns the loss before the step."""
    loss, grad = critic_loss_and_grad(critic, actor, batch)
    critic.optimizer, critic.net = adam_step(critic.optimizer, critic.net, grad)
    return loss


def actor_objective_and_grad(critic: Critic, actor: Actor, batch):
    s_t, s_prime = batch.s_t, batch.s_prime
    B = len(s_t)
    pair = _pair(s_t, s_prime)
    a_cache = forward_cached(actor.net, pair)
    acts = a_cache.output
    c_cache = forward_cached(critic.net, np.concatenate([pair, acts], axis=1))
    q = c_cache.output[:, 0]
    z = a_cache.pre_output
    objective = float(np.mean(q) + actor.preactivation_weight * np.mean(z * z))
    if not np.isfinite(objective):
        raise DivergenceError("actor objective is not finite")
    c_grad = backward_cached(critic.net, c_cache, np.full((B, 1), 1.0 / B))
    d_act = c_grad.input_gradient[:, -acts.shape[1]:]
    d_pre = 2.0 * actor.preactivation_weight * z / z.size
    return objective, backward_cached(actor.net, a_cache, d_act, pre_activation_cotangent=d_pre)


def actor_update(critic: Critic, actor: Actor, batch) -> float:
    """One Adam step on the actor through the frozen online critic."""
    if critic.kind != "continuous":
        raise ValueError("actor_update needs a continuous critic")
    objective, grad = actor_objective_and_grad(critic, actor, batch)
    actor.optimizer, actor.net = adam_step(actor.optimizer, actor.net, grad)
    return objective
