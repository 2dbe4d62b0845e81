"""Learners (PQM + aimer, DQN), batched rollouts and greedy evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..aimer import Aimer, aimer_predict, aimer_update, make_aimer, sample_aimer_pairs
from ..dqn import QNetwork, dqn_act, dqn_update, make_qnetwork
from ..envs import Env, Task, env_reset, masked_sq_distance
from ..nn import AdamState, ParameterSet
from ..pqm import (
    Actor,
    Critic,
    ExplorationSpec,
    actor_update,
    critic_update,
    explore_action,
    greedy_action,
    make_actor,
    make_critic,
)
from ..replay import Episode, ReplayBuffer, sample_dqn_batch, sample_pqm_batch
from .config import TrainConfig


class PQMLearner:
    """Quasi-metric critic (+ actor for continuous actions) composed with a task aimer.

    The policy acts ``greedy(critic, actor, s, h(s, g))``.
    """

    kind = "pqm"

    def __init__(self, critic: Critic, actor: Optional[Actor], aimer: Aimer, exploration: ExplorationSpec,
                 recompute: str = "per_step"):
        self.critic = critic
        self.actor = actor
        self.aimer = aimer
        self.exploration = exploration
        self.recompute = recompute

    @classmethod
    def from_config(cls, config: TrainConfig, env: Env, task: Task, rng: np.random.Generator) -> "PQMLearner":
        horizon = env.horizon(task)
        spec = env.action_spec
        lr = config.learning_rate
        if spec.discrete:
            critic = make_critic("discrete", env.state_dim, spec.n_actions, config.critic_hidden, 2 * horizon, rng, lr)
            actor = None
            out_act = "sigmoid"
        else:
            critic = make_critic("continuous", env.state_dim, spec.dim, config.critic_hidden, 2 * horizon, rng, lr)
            actor = make_actor(env.state_dim, spec.dim, config.actor_hidden, rng, lr, config.actor_preactivation_weight)
            out_act = "linear"
        aimer = make_aimer(task, config.aimer_hidden, out_act, config.lambda1, config.lambda2, rng, lr)
        exploration = ExplorationSpec(config.epsilon, config.gaussian_sigma, config.random_action_prob)
        return cls(critic, actor, aimer, exploration, config.aimer_recompute)

    def targets(self, S, GV):
        return aimer_predict(self.aimer, S, GV)

    def act(self, S, GV, H, rng, explore: bool):
        if self.recompute == "per_step" or H is None:
            H = self.targets(S, GV)
        if explore:
            return explore_action(self.exploration, self.critic, self.actor, S, H, rng)
        return greedy_action(self.critic, self.actor, S, H)

    def update(self, buffer: ReplayBuffer, config: TrainConfig, env: Env, task: Task, rng) -> Dict[str, float]:
        losses = {}
        batch = sample_pqm_batch(buffer, config.batch_size, config.p_relabel, rng)
        losses["critic_loss"] = critic_update(self.critic, self.actor, batch)
        if self.actor is not None:
            batch = sample_pqm_batch(buffer, config.batch_size, config.p_relabel, rng)
            losses["actor_loss"] = actor_update(self.critic, self.actor, batch)
        pairs = sample_aimer_pairs(buffer, task, config.batch_size, rng, config.aimer_hindsight_fraction)
        losses["aimer_loss"] = aimer_update(self.aimer, self.critic, self.actor, pairs, env)
        return losses

    def polyak(self, decay: float):
        self.critic.polyak(decay)
        if self.actor is not None:
            self.actor.polyak(decay)

    def networks(self) -> Dict[str, ParameterSet]:
        nets = {"critic": self.critic.net, "critic_target": self.critic.target_net}
        if self.actor is not None:
            nets.update(actor=self.actor.net, actor_target=self.actor.target_net)
        nets["aimer"] = self.aimer.net
        return nets

    def optimizers(self) -> Dict[str, AdamState]:
        opts = {"critic": self.critic.optimizer}
        if self.actor is not None:
            opts["actor"] = self.actor.optimizer
        opts["aimer"] = self.aimer.optimizer
        return opts

    def set_state(self, nets: Dict[str, ParameterSet], opts: Dict[str, AdamState]):
        if "critic" in nets:
            self.critic.net, self.critic.target_net = nets["critic"], nets["critic_target"]
            self.critic.optimizer = opts["critic"]
        if self.actor is not None and "actor" in nets:
            self.actor.net, self.actor.target_net = nets["actor"], nets["actor_target"]
            self.actor.optimizer = opts["actor"]
        if "aimer" in nets:
            self.aimer.net, self.aimer.optimizer = nets["aimer"], opts["aimer"]


class DQNLearner:
    kind = "dqn"

    def __init__(self, qnet: QNetwork, epsilon: float, gamma: float):
        self.qnet = qnet
        self.epsilon = epsilon
        self.gamma = gamma

    @classmethod
    def from_config(cls, config: TrainConfig, env: Env, task: Task, rng) -> "DQNLearner":
        if not env.action_spec.discrete:
            raise ValueError("DQN needs a discrete action space")
        qnet = make_qnetwork(task.mask, env.action_spec.n_actions, config.critic_hidden, env.horizon(task), rng,
                             config.learning_rate)
        return cls(qnet, config.epsilon, config.gamma)

    def targets(self, S, GV):
        return None

    def act(self, S, GV, H, rng, explore: bool):
        return dqn_act(self.qnet, S, GV, self.epsilon if explore else 0.0, rng)

    def update(self, buffer, config, env, task, rng) -> Dict[str, float]:
        batch = sample_dqn_batch(buffer, config.batch_size, config.p_relabel, rng)
        return {"critic_loss": dqn_update(self.qnet, batch, self.gamma)}

    def polyak(self, decay):
        self.qnet.polyak(decay)

    def networks(self):
        return {"qnet": self.qnet.net, "qnet_target": self.qnet.target_net}

    def optimizers(self):
        return {"qnet": self.qnet.optimizer}

    def set_state(self, nets, opts):
        self.qnet.net, self.qnet.target_net, self.qnet.optimizer = nets["qnet"], nets["qnet_target"], opts["qnet"]


def build_learner(config: TrainConfig, env: Env, task: Task, rng):
    cls = PQMLearner if config.learner == "pqm" else DQNLearner
    return cls.from_config(config, env, task, rng)


@dataclass
class Rollouts:
    episodes: List[Episode]
    success: np.ndarray
    steps_to_goal: np.ndarray
    start_states: np.ndarray
    goal_values: np.ndarray


def run_episodes(learner, env: Env, task: Task, n: int, rng: np.random.Generator, mode: str = "explore",
                 starts=None) -> Rollouts:
    """Run ``n`` episodes in lock-step.

    Each episode stops at the horizon or when its goal is first achieved.
    ``steps_to_goal`` is the index of the first success, or the horizon.
    ``starts`` optionally gives ``(states, goal_values)`` instead of resets.
    """
    if mode not in ("explore", "greedy"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    explore = mode == "explore"
    horizon = env.horizon(task)
    if starts is None:
        resets = [env_reset(env, task, rng) for _ in range(n)]
        S = np.stack([s for s, _ in resets])
        GV = np.stack([g.values for _, g in resets])
    else:
        S, GV = (np.array(a, dtype=np.float64) for a in starts)
        n = len(S)
    start_states = S.copy()
    targets = np.zeros((n, env.state_dim))
    targets[:, task.mask] = GV
    H = learner.targets(S, GV) if getattr(learner, "recompute", "per_step") == "per_episode" else None
    tol2 = task.tolerance ** 2
    history = [[S[i].copy()] for i in range(n)]
    actions: List[list] = [[] for _ in range(n)]
    active = np.ones(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    steps = np.full(n, horizon, dtype=np.int64)
    for t in range(horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        A = learner.act(S[idx], GV[idx], None if H is None else H[idx], rng, explore)
        S_next = env.step_batch(S[idx], A)
        S[idx] = S_next
        reached = masked_sq_distance(S_next, targets[idx], task.mask) <= tol2
        for j, i in enumerate(idx):
            history[i].append(S_next[j].copy())
            actions[i].append(A[j])
        done = idx[reached]
        success[done] = True
        steps[done] = t + 1
        active[done] = False
    episodes = [
        Episode.from_arrays(np.stack(history[i]), np.asarray(actions[i]), task.goal_from_values(GV[i]))
        for i in range(n)
    ]
    return Rollouts(episodes, success, steps, start_states, GV)


def run_episode(learner, env: Env, task: Task, rng, mode: str = "explore"):
    """Single episode: ``(episode, success, steps_to_goal)``."""
    r = run_episodes(learner, env, task, 1, rng, mode)
    return r.episodes[0], bool(r.success[0]), int(r.steps_to_goal[0])


def evaluate(learner, env: Env, task: Task, n_episodes: int, rng: np.random.Generator):
    """Greedy episodes: ``(success_rate, median_time_to_goal)``; failures count as the horizon."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    r = run_episodes(learner, env, task, n_episodes, rng, "greedy")
    return float(np.mean(r.success)), float(np.median(r.steps_to_goal))
