"""Goal-conditioned environments, goal-set distances and exact distance oracles.

Two environments are provided:

* ``BitFlipEnv`` -- a Boolean vector of ``n`` bits, action ``i`` toggles bit ``i``.
* ``PointMassEnv`` -- a 2-d point with inertia in the box ``[-1, 1]^2``; the
  state is ``[x, y, vx, vy]`` and the action an acceleration in ``[-1, 1]^2``.

A goal is a set of states described by a coordinate mask and target values
on the masked coordinates. A task is a family of goals sharing one mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

MAX_RESET_TRIES = 100


class InvalidTaskError(ValueError):
    pass


class UnreachableError(RuntimeError):
    """The BFS oracle exhausted its search budget."""


@dataclass(frozen=True)
class ActionSpec:
    kind: str  # "discrete" or "continuous"
    n_actions: int = 0
    dim: int = 0
    bound: float = 1.0

    def __post_init__(self):
        if self.kind == "discrete" and self.n_actions < 1:
            raise ValueError("discrete action spec needs n_actions >= 1")
        if self.kind == "continuous" and (self.dim < 1 or self.bound <= 0):
            raise ValueError("continuous action spec needs dim >= 1 and bound > 0")
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {self.kind!r}")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"


@dataclass
class Goal:
    mask: np.ndarray
    target: np.ndarray
    tolerance: float = 0.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.mask.shape != self.target.shape or self.mask.ndim != 1:
            raise ValueError("goal mask and target must be vectors of the same length")
        if not self.mask.any():
            raise ValueError("goal must constrain at least one coordinate")
        if not np.all(np.isfinite(self.target[self.mask])):
            raise ValueError("goal target must be finite on masked coordinates")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")

    @property
    def values(self) -> np.ndarray:
        """Target values on the masked coordinates (the goal's network encoding)."""
        return self.target[self.mask]


@dataclass(frozen=True)
class Task:
    name: str
    mask: np.ndarray
    low: float
    high: float
    binary: bool
    tolerance: float

    @property
    def goal_dim(self) -> int:
        return int(np.count_nonzero(self.mask))

    def sample_values(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.goal_dim,) if size is None else (size, self.goal_dim)
        if self.binary:
            return rng.integers(0, 2, size=shape).astype(np.float64)
        return rng.uniform(self.low, self.high, size=shape)

    def goal_from_values(self, values) -> Goal:
        target = np.zeros(self.mask.shape[0])
        target[self.mask] = values
        return Goal(self.mask.copy(), target, self.tolerance)

    def sample_goal(self, rng: np.random.Generator) -> Goal:
        return self.goal_from_values(self.sample_values(rng))

    def goal_from_state(self, s) -> Goal:
        """The goal of this task that ``s`` achieves (hindsight relabeling)."""
        return self.goal_from_values(np.asarray(s, dtype=np.float64)[self.mask])


def masked_sq_distance(states, targets, mask) -> np.ndarray:
    """Squared L2 over masked coordinates; broadcasts over leading axes."""
    diff = (np.asarray(states, dtype=np.float64) - np.asarray(targets, dtype=np.float64)) * mask
    return np.sum(diff * diff, axis=-1)


class BitFlipEnv:
    name = "bitflip"

    def __init__(self, n_bits: int = 12):
        if n_bits < 2:
            raise ValueError("bit-flip needs at least 2 bits")
        self.n_bits = int(n_bits)
        self.state_dim = self.n_bits
        self.action_spec = ActionSpec("discrete", n_actions=self.n_bits)
        half = self.n_bits // 2
        first = np.zeros(self.n_bits, dtype=bool)
        first[:half] = True
        last = np.zeros(self.n_bits, dtype=bool)
        last[self.n_bits - half:] = True
        self.tasks: Dict[str, Task] = {
            "first-half": Task("first-half", first, 0.0, 1.0, True, 0.0),
            "last-half": Task("last-half", last, 0.0, 1.0, True, 0.0),
        }

    def horizon(self, task: Task) -> int:
        return task.goal_dim

    def sample_states(self, rng, size):
        return rng.integers(0, 2, size=(size, self.n_bits)).astype(np.float64)

    def step(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = int(a)
        if not 0 <= a < self.n_bits:
            raise ValueError(f"action {a} out of range for {self.n_bits} bits")
        out = s.copy()
        out[a] = 1.0 - out[a]
        return out

    def step_batch(self, S, A):
        out = np.array(S, dtype=np.float64, copy=True)
        rows = np.arange(out.shape[0])
        out[rows, A] = 1.0 - out[rows, A]
        return out

    def validity_penalty(self, S):
        return self.validity_penalty_and_grad(S)[0]

    def validity_penalty_and_grad(self, S):
        S = np.asarray(S, dtype=np.float64)
        below = np.minimum(S, 0.0)
        above = np.maximum(S - 1.0, 0.0)
        return np.sum(below * below + above * above, axis=-1), 2.0 * (below + above)


class PointMassEnv:
    name = "pointmass"
    accel = 0.1
    v_max = 0.25
    x_max = 1.0
    tolerance = 0.05

    def __init__(self, horizon: int = 50):
        self.state_dim = 4
        self.action_spec = ActionSpec("continuous", dim=2, bound=1.0)
        self._horizon = int(horizon)
        self.tasks: Dict[str, Task] = {
            "reach-pos": Task("reach-pos", np.array([1, 1, 0, 0], dtype=bool), -1.0, 1.0, False, self.tolerance),
            "reach-x": Task("reach-x", np.array([1, 0, 0, 0], dtype=bool), -1.0, 1.0, False, self.tolerance),
        }

    def horizon(self, task: Task) -> int:
        return self._horizon

    def sample_states(self, rng, size):
        S = np.zeros((size, 4))
        S[:, :2] = rng.uniform(-self.x_max, self.x_max, size=(size, 2))
        return S

    def step(self, s, a):
        return self.step_batch(np.asarray(s, dtype=np.float64)[None], np.asarray(a, dtype=np.float64)[None])[0]

    def step_batch(self, S, A):
        S = np.asarray(S, dtype=np.float64)
        A = np.clip(np.asarray(A, dtype=np.float64), -1.0, 1.0)
        v = np.clip(S[:, 2:] + self.accel * A, -self.v_max, self.v_max)
        x = np.clip(S[:, :2] + v, -self.x_max, self.x_max)
        return np.concatenate([x, v], axis=1)

    def validity_penalty(self, S):
        return self.validity_penalty_and_grad(S)[0]

    def validity_penalty_and_grad(self, S):
        S = np.asarray(S, dtype=np.float64)
        limit = np.empty(S.shape[-1])
        limit[:2] = self.x_max
        limit[2:] = self.v_max
        excess = np.maximum(np.abs(S) - limit, 0.0)
        return np.sum(excess * excess, axis=-1), 2.0 * excess * np.sign(S)


Env = Union[BitFlipEnv, PointMassEnv]


def make_env(name: str, bits: int = 12) -> Env:
    if name == "bitflip":
        return BitFlipEnv(bits)
    if name == "pointmass":
        return PointMassEnv()
    raise ValueError(f"unknown environment {name!r}")


def get_task(env: Env, name: str) -> Task:
    try:
        return env.tasks[name]
    except KeyError:
        raise InvalidTaskError(f"task {name!r} not available for {env.name}; choose from {sorted(env.tasks)}")


def env_reset(env: Env, task: Task, rng: np.random.Generator):
    """Sample a start state and a goal that the start state does not already satisfy."""
    if not any(task is t or task.name == t.name for t in env.tasks.values()):
        raise InvalidTaskError(f"task {task.name!r} does not belong to {env.name}")
    for _ in range(MAX_RESET_TRIES):
        s = env.sample_states(rng, 1)[0]
        g = task.sample_goal(rng)
        if not goal_achieved(s, g):
            return s, g
    raise InvalidTaskError(f"could not sample an unsatisfied goal for task {task.name!r}")


def env_step(env: Env, s, a):
    return env.step(s, a)


def goal_distance(s, g: Goal):
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != g.mask.shape[0]:
        raise ValueError("state and goal dimensions differ")
    return masked_sq_distance(s, g.target, g.mask)


def goal_achieved(s, g: Goal):
    return goal_distance(s, g) <= g.tolerance ** 2


def validity_penalty(env: Env, s):
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != env.state_dim:
        raise ValueError("state dimension does not match environment")
    return env.validity_penalty(s)


def hamming_oracle(s, s2) -> int:
    s = np.asarray(s, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    for v in (s, s2):
        if not np.all((v == 0.0) | (v == 1.0)):
            raise ValueError("hamming_oracle expects Boolean states")
    if s.shape != s2.shape:
        raise ValueError("states have different lengths")
    return int(np.count_nonzero(s != s2))


_QUANTIZED_ACTIONS = np.array([(ax, ay) for ax in (-1.0, 0.0, 1.0) for ay in (-1.0, 0.0, 1.0)])


def pointmass_steps_oracle(
    s,
    target: Union[Goal, np.ndarray],
    quantization: int = 20,
    tolerance: Optional[float] = None,
    max_steps: int = 200,
    max_states: int = 2_000_000,
    env: Optional[PointMassEnv] = None,
) -> int:
    """Breadth-first step count from ``s`` to ``target`` with actions in ``{-1, 0, 1}^2``.

    ``target`` is a :class:`Goal` or a full state (all four coordinates must
    be matched within ``tolerance``). States are merged when they fall in the
    same cell of a grid with ``quantization`` cells per unit, so the result is
    an upper bound on the optimum over continuous actions. States lying on
    the 1/20 lattice stay on it, which makes the count exact for the
    quantized action set there.
    """
    env = env or PointMassEnv()
    if isinstance(target, Goal):
        goal = target
    else:
        tol = env.tolerance if tolerance is None else tolerance
        goal = Goal(np.ones(4, dtype=bool), np.asarray(target, dtype=np.float64), tol)
    if tolerance is not None and isinstance(target, Goal):
        goal = Goal(goal.mask, goal.target, tolerance)
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (4,):
        raise ValueError("pointmass_steps_oracle expects 4-d point-mass states")
    if goal_achieved(s, goal):
        return 0
    tol2 = goal.tolerance ** 2 + 1e-12

    def keys(S):
        q = np.rint(S * quantization).astype(np.int64) + 4 * quantization
        span = 8 * quantization + 1
        return ((q[:, 0] * span + q[:, 1]) * span + q[:, 2]) * span + q[:, 3]

    frontier = s[None, :]
    visited = keys(frontier)
    n_act = len(_QUANTIZED_ACTIONS)
    for depth in range(1, max_steps + 1):
        S = np.repeat(frontier, n_act, axis=0)
        A = np.tile(_QUANTIZED_ACTIONS, (len(frontier), 1))
        nxt = env.step_batch(S, A)
        if np.any(masked_sq_distance(nxt, goal.target, goal.mask) <= tol2):
            return depth
        k = keys(nxt)
        k_unique, first = np.unique(k, return_index=True)
        fresh = ~np.isin(k_unique, visited, assume_unique=True)
        if not fresh.any():
            break
        frontier = nxt[first[fresh]]
        visited = np.union1d(visited, k_unique[fresh])
        if visited.size > max_states:
            break
    raise UnreachableError(f"target not reached within {max_steps} steps")
