"""Episode replay buffer with "future" hindsight relabeling done at sample time."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

from .envs import Goal, masked_sq_distance

DEFAULT_P_RELABEL = 0.8  # k / (k + 1) with k = 4 future goals per real goal


class EmptyBufferError(LookupError):
    pass


@dataclass
class Step:
    s: np.ndarray
    a: object
    s_next: np.ndarray


@dataclass
class Episode:
    steps: List[Step]
    goal: Goal

    def __len__(self):
        return len(self.steps)

    def check(self):
        if not self.steps:
            raise ValueError("episode is empty")
        for t in range(len(self.steps) - 1):
            if not np.array_equal(self.steps[t].s_next, self.steps[t + 1].s):
                raise ValueError(f"episode is not chained at step {t}")

    @property
    def states(self) -> np.ndarray:
        """Achieved states ``s_0 .. s_T`` as a ``(T + 1, d_s)`` array."""
        return np.stack([self.steps[0].s] + [st.s_next for st in self.steps]).astype(np.float64)

    @property
    def actions(self) -> np.ndarray:
        return np.asarray([st.a for st in self.steps])

    @classmethod
    def from_arrays(cls, states, actions, goal: Goal) -> "Episode":
        states = np.asarray(states, dtype=np.float64)
        steps = [Step(states[t], actions[t], states[t + 1]) for t in range(len(actions))]
        return cls(steps, goal)


@dataclass
class PqmBatchItem:
    s_t: np.ndarray
    a_t: object
    s_next: np.ndarray
    s_prime: np.ndarray


@dataclass
class DqnBatchItem:
    s_t: np.ndarray
    a_t: object
    s_next: np.ndarray
    goal: Goal
    reward: float
    done: bool


@dataclass
class PqmBatch:
    s_t: np.ndarray
    a_t: np.ndarray
    s_next: np.ndarray
    s_prime: np.ndarray
    relabeled: np.ndarray
    episode: np.ndarray
    t: np.ndarray
    t_future: np.ndarray  # index of the achieved state used, -1 when not relabeled

    def __len__(self):
        return len(self.s_t)

    def items(self) -> Iterator[PqmBatchItem]:
        for i in range(len(self)):
            yield PqmBatchItem(self.s_t[i], self.a_t[i], self.s_next[i], self.s_prime[i])


@dataclass
class DqnBatch:
    s_t: np.ndarray
    a_t: np.ndarray
    s_next: np.ndarray
    goal_mask: np.ndarray
    goal_target: np.ndarray
    goal_tolerance: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    relabeled: np.ndarray
    episode: np.ndarray
    t: np.ndarray
    t_future: np.ndarray

    def __len__(self):
        return len(self.s_t)

    @property
    def goal_values(self) -> np.ndarray:
        """Masked target values, one row per item (all items share one mask)."""
        return self.goal_target[:, self.goal_mask[0]]

    def items(self) -> Iterator[DqnBatchItem]:
        for i in range(len(self)):
            g = Goal(self.goal_mask[i], self.goal_target[i], float(self.goal_tolerance[i]))
            yield DqnBatchItem(self.s_t[i], self.a_t[i], self.s_next[i], g, float(self.reward[i]), bool(self.done[i]))


class ReplayBuffer:
    """Stores whole episodes; capacity is counted in transitions.

    Eviction drops the oldest episodes first so every stored episode stays
    complete (the "future" strategy needs the rest of the episode).
    """

    def __init__(self, capacity: int = 10**6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.episodes: deque = deque()
        self.n_transitions = 0
        self._flat = None

    def __len__(self):
        return self.n_transitions

    def clear(self):
        self.episodes.clear()
        self.n_transitions = 0
        self._flat = None

    def store(self, episode: Episode) -> "ReplayBuffer":
        episode.check()
        if len(episode) > self.capacity:
            raise ValueError("episode is longer than the buffer capacity")
        self.episodes.append(_PackedEpisode.pack(episode))
        self.n_transitions += len(episode)
        while self.n_transitions > self.capacity:
            self.n_transitions -= self.episodes.popleft().length
        self._flat = None
        return self

    def _flatten(self) -> "_Flat":
        if self._flat is None:
            if not self.episodes:
                raise EmptyBufferError("replay buffer is empty")
            self._flat = _Flat.build(list(self.episodes))
        return self._flat

    def sample_skeleton(self, batch_size: int, rng: np.random.Generator):
        """Uniform transitions: episode chosen proportionally to its length, then a uniform step."""
        flat = self._flatten()
        idx = rng.integers(0, flat.total, size=batch_size)
        ep = flat.ep_of[idx]
        t = flat.t_of[idx]
        return flat, ep, t

    @staticmethod
    def future_index(flat: "_Flat", ep, t, rng):
        """Uniform ``t'`` in ``[t, T - 1]``; achieved state ``s_{t'+1}`` is the relabel target."""
        span = flat.length[ep] - t
        return t + np.floor(rng.random(len(t)) * span).astype(np.int64)


@dataclass
class _PackedEpisode:
    states: np.ndarray
    actions: np.ndarray
    goal: Goal

    @property
    def length(self) -> int:
        return len(self.actions)

    @classmethod
    def pack(cls, episode: Episode):
        return cls(episode.states, episode.actions, episode.goal)


@dataclass
class _Flat:
    states: np.ndarray  # all achieved states, episodes concatenated
    actions: np.ndarray
    start: np.ndarray  # row of s_0 of each episode in ``states``
    length: np.ndarray
    ep_of: np.ndarray  # per transition
    t_of: np.ndarray
    goal_mask: np.ndarray
    goal_target: np.ndarray
    goal_tol: np.ndarray
    total: int = field(default=0)

    @classmethod
    def build(cls, episodes: List[_PackedEpisode]):
        lengths = np.array([e.length for e in episodes], dtype=np.int64)
        start = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]]).astype(np.int64)
        ep_of = np.repeat(np.arange(len(episodes)), lengths)
        first_t = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        t_of = np.arange(lengths.sum()) - np.repeat(first_t, lengths)
        return cls(
            states=np.concatenate([e.states for e in episodes]),
            actions=np.concatenate([e.actions for e in episodes]),
            start=start,
            length=lengths,
            ep_of=ep_of,
            t_of=t_of,
            goal_mask=np.stack([e.goal.mask for e in episodes]),
            goal_target=np.stack([e.goal.target for e in episodes]),
            goal_tol=np.array([e.goal.tolerance for e in episodes]),
            total=int(lengths.sum()),
        )

    def state(self, ep, t):
        return self.states[self.start[ep] + t]

    def action(self, ep, t):
        first_t = self.start[ep] - ep  # actions are not padded by the extra final state
        return self.actions[first_t + t]


def goal_embedding(final_state, goal_mask, goal_target):
    """A concrete state inside the goal set: the final achieved state with masked coordinates overwritten."""
    return np.where(goal_mask, goal_target, final_state)


def sample_pqm_batch(buffer: ReplayBuffer, batch_size: int, p_relabel: float = DEFAULT_P_RELABEL,
                     rng: Optional[np.random.Generator] = None) -> PqmBatch:
    rng = rng if rng is not None else np.random.default_rng()
    flat, ep, t = buffer.sample_skeleton(batch_size, rng)
    relabel = rng.random(batch_size) < p_relabel
    t_fut = ReplayBuffer.future_index(flat, ep, t, rng)
    s_t = flat.state(ep, t)
    s_next = flat.state(ep, t + 1)
    future = flat.state(ep, t_fut + 1)
    embedded = goal_embedding(flat.state(ep, flat.length[ep]), flat.goal_mask[ep], flat.goal_target[ep])
    s_prime = np.where(relabel[:, None], future, embedded)
    return PqmBatch(s_t, flat.action(ep, t), s_next, s_prime, relabel, ep, t, np.where(relabel, t_fut, -1))


def sample_dqn_batch(buffer: ReplayBuffer, batch_size: int, p_relabel: float = DEFAULT_P_RELABEL,
                     rng: Optional[np.random.Generator] = None) -> DqnBatch:
    rng = rng if rng is not None else np.random.default_rng()
    flat, ep, t = buffer.sample_skeleton(batch_size, rng)
    relabel = rng.random(batch_size) < p_relabel
    t_fut = ReplayBuffer.future_index(flat, ep, t, rng)
    s_t = flat.state(ep, t)
    s_next = flat.state(ep, t + 1)
    mask = flat.goal_mask[ep]
    target = np.where(relabel[:, None], np.where(mask, flat.state(ep, t_fut + 1), 0.0), flat.goal_target[ep])
    tol = flat.goal_tol[ep]
    done = masked_sq_distance(s_next, target, mask) <= tol * tol
    reward = np.where(done, 0.0, -1.0)
    return DqnBatch(s_t, flat.action(ep, t), s_next, mask, target, tol, reward, done, relabel, ep, t,
                    np.where(relabel, t_fut, -1))
