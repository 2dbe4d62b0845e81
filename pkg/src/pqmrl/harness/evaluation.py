"""Quasi-metric accuracy against exact oracles (Hamming on bit-flip, BFS on the point mass)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..envs import BitFlipEnv, PointMassEnv, Task, UnreachableError, pointmass_steps_oracle
from ..pqm import Actor, Critic, critic_value_continuous, critic_values_discrete, metric_estimate

LATTICE = 20  # oracle grid: 1/20 cells


def sample_lattice_states(rng: np.random.Generator, n: int, pos_limit: float = 0.6) -> np.ndarray:
    """Point-mass states with positions on multiples of 0.1 and velocities in {-0.2, -0.1, ..., 0.2}.

    Velocity changes by multiples of 0.1 under quantized actions, so this
    sub-lattice is closed under the dynamics while the speed limit is not
    hit. States elsewhere on the 1/20 grid can be unreachable from it.
    """
    k = int(round(pos_limit * 10))
    pos = rng.integers(-k, k + 1, size=(n, 2)) / 10.0
    vel = rng.integers(-2, 3, size=(n, 2)) / 10.0
    return np.concatenate([pos, vel], axis=1)


def metric_pairs(env, task: Task, n_pairs: int, pair_mode: str, rng: np.random.Generator):
    """Start/target pairs: ``in_task`` differ only on the task's masked coordinates."""
    if pair_mode not in ("in_task", "random"):
        raise ValueError(f"unknown pair mode {pair_mode!r}")
    if isinstance(env, BitFlipEnv):
        S = env.sample_states(rng, n_pairs)
        if pair_mode == "random":
            return S, env.sample_states(rng, n_pairs)
        S2 = S.copy()
        S2[:, task.mask] = task.sample_values(rng, n_pairs)
        return S, S2
    S = sample_lattice_states(rng, n_pairs)
    if pair_mode == "random":
        return S, sample_lattice_states(rng, n_pairs)
    S2 = S.copy()
    S2[:, task.mask] = sample_lattice_states(rng, n_pairs)[:, task.mask]
    return S, S2


def true_distances(env, S, S2) -> np.ndarray:
    if isinstance(env, BitFlipEnv):
        return np.count_nonzero(S != S2, axis=1).astype(np.float64)
    return np.array([pointmass_steps_oracle(a, b, LATTICE, env=env) for a, b in zip(S, S2)], dtype=np.float64)


def eval_metric_accuracy(critic: Critic, actor, env, task: Task, n_pairs: int, pair_mode: str,
                         rng: np.random.Generator) -> np.ndarray:
    """``(n_pairs, 2)`` table of ``(true_distance, estimate)``; estimates are reported unclamped."""
    S, S2 = metric_pairs(env, task, n_pairs, pair_mode, rng)
    est = metric_estimate(critic, actor, S, S2)
    return np.column_stack([true_distances(env, S, S2), est])


def spearman(table: np.ndarray) -> float:
    return float(spearmanr(table[:, 0], table[:, 1]).statistic)


def write_metric_csv(path, table: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["true_distance,estimate"] + [f"{int(d)},{e:.6g}" for d, e in table]
    path.write_text("\n".join(lines) + "\n")
    return path


def one_step_consistency(critic: Critic, actor, env, n: int, rng: np.random.Generator) -> float:
    """Mean ``|f(s, step(s, a), a) - 1|`` over random states and actions."""
    S = env.sample_states(rng, n)
    if env.action_spec.discrete:
        A = rng.integers(0, env.action_spec.n_actions, size=n)
    else:
        A = rng.uniform(-1, 1, size=(n, env.action_spec.dim))
    vals = metric_values_at(critic, S, env.step_batch(S, A), A)
    return float(np.mean(np.abs(vals - 1.0)))


def metric_values_at(critic: Critic, S, S2, A) -> np.ndarray:
    """``f(s, s', a)`` at the given actions."""
    if critic.kind == "discrete":
        return critic_values_discrete(critic, S, S2)[np.arange(len(S)), np.asarray(A, dtype=np.int64)]
    return critic_value_continuous(critic, S, S2, A)


def asymmetric_pairs(env: PointMassEnv, n_pairs: int, rng: np.random.Generator, min_gap: int = 2,
                     max_tries: int = 20_000):
    """Lattice state pairs whose oracle step counts differ by at least ``min_gap`` between directions.

    ``s1`` comes from a short random quantized walk from rest and ``s2`` from
    continuing that walk, so ``s2`` is reachable from ``s1``; the order of
    each pair is then shuffled. Returns ``(S1, S2, d12, d21)``.
    """
    S1, S2, D12, D21 = [], [], [], []
    for _ in range(max_tries):
        if len(S1) >= n_pairs:
            break
        s = sample_lattice_states(rng, 1, 0.6)[0]
        s[2:] = 0.0
        walk = [s]
        for _ in range(int(rng.integers(2, 12))):
            a = rng.integers(-1, 2, size=2).astype(np.float64)
            walk.append(env.step(walk[-1], a))
        i = int(rng.integers(1, len(walk) - 1))
        a_state, b_state = np.round(walk[i] * LATTICE) / LATTICE, np.round(walk[-1] * LATTICE) / LATTICE
        if rng.random() < 0.5:
            a_state, b_state = b_state, a_state
        try:
            d_ab = pointmass_steps_oracle(a_state, b_state, LATTICE, env=env, max_steps=60)
            d_ba = pointmass_steps_oracle(b_state, a_state, LATTICE, env=env, max_steps=60)
        except UnreachableError:
            continue
        if abs(d_ab - d_ba) >= min_gap:
            S1.append(a_state)
            S2.append(b_state)
            D12.append(d_ab)
            D21.append(d_ba)
    return np.array(S1), np.array(S2), np.array(D12, dtype=float), np.array(D21, dtype=float)


def asymmetry_agreement(critic: Critic, actor: Actor, S1, S2, d12, d21) -> float:
    """Fraction of pairs where the critic orders the two directions like the oracle."""
    f12 = metric_estimate(critic, actor, S1, S2)
    f21 = metric_estimate(critic, actor, S2, S1)
    return float(np.mean(np.sign(f12 - f21) == np.sign(d12 - d21)))
