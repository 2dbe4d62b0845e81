import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqmrl.envs import BitFlipEnv, get_task, goal_achieved
from pqmrl.replay import (
    EmptyBufferError,
    Episode,
    ReplayBuffer,
    Step,
    sample_dqn_batch,
    sample_pqm_batch,
)

ENV = BitFlipEnv(6)
TASK = get_task(ENV, "first-half")


def random_episode(rng, length, env=ENV, task=TASK):
    s = env.sample_states(rng, 1)[0]
    states, actions = [s], []
    for _ in range(length):
        a = int(rng.integers(env.action_spec.n_actions))
        actions.append(a)
        states.append(env.step(states[-1], a))
    return Episode.from_arrays(np.stack(states), np.array(actions), task.sample_goal(rng))


def filled_buffer(seed, n_episodes=8, capacity=10**6):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity)
    episodes = []
    for _ in range(n_episodes):
        ep = random_episode(rng, int(rng.integers(1, 7)))
        buf.store(ep)
        episodes.append(ep)
    return buf, episodes


def test_store_counts_and_eviction():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(10)
    buf.store(random_episode(rng, 6))
    assert buf.n_transitions == 6
    second = random_episode(rng, 6)
    buf.store(second)
    assert buf.n_transitions == 6 and len(buf.episodes) == 1
    assert np.array_equal(buf.episodes[0].states, second.states)


def test_store_rejects_bad_episodes():
    rng = np.random.default_rng(1)
    ep = random_episode(rng, 4)
    ep.steps[2] = Step(ep.steps[2].s + 1.0, ep.steps[2].a, ep.steps[2].s_next)
    buf = ReplayBuffer()
    with pytest.raises(ValueError):
        buf.store(ep)
    with pytest.raises(ValueError):
        buf.store(Episode([], TASK.sample_goal(rng)))
    with pytest.raises(ValueError):
        ReplayBuffer(3).store(random_episode(rng, 4))


def test_empty_buffer():
    with pytest.raises(EmptyBufferError):
        sample_pqm_batch(ReplayBuffer(), 4, rng=np.random.default_rng(0))
    with pytest.raises(EmptyBufferError):
        sample_dqn_batch(ReplayBuffer(), 4, rng=np.random.default_rng(0))


def test_one_step_episode_relabel():
    rng = np.random.default_rng(2)
    buf = ReplayBuffer()
    ep = random_episode(rng, 1)
    buf.store(ep)
    b = sample_pqm_batch(buf, 16, p_relabel=1.0, rng=rng)
    assert np.all(b.s_prime == ep.steps[0].s_next)


def test_no_relabel_uses_goal_embedding():
    buf, episodes = filled_buffer(3)
    b = sample_pqm_batch(buf, 200, p_relabel=0.0, rng=np.random.default_rng(0))
    assert not b.relabeled.any()
    for i, item in enumerate(b.items()):
        ep = episodes[b.episode[i]]
        expected = np.where(ep.goal.mask, ep.goal.target, ep.states[-1])
        assert np.array_equal(item.s_prime, expected)
        assert goal_achieved(item.s_prime, ep.goal)


def test_dqn_relabel_at_t_is_done():
    rng = np.random.default_rng(4)
    buf = ReplayBuffer()
    buf.store(random_episode(rng, 1))
    b = sample_dqn_batch(buf, 32, p_relabel=1.0, rng=rng)
    assert b.done.all() and np.all(b.reward == 0.0)


def test_dqn_non_achieving_reward():
    buf, _ = filled_buffer(5)
    b = sample_dqn_batch(buf, 500, p_relabel=0.0, rng=np.random.default_rng(1))
    for item in b.items():
        achieved = bool(goal_achieved(item.s_next, item.goal))
        assert item.done == achieved
        assert item.reward == (0.0 if achieved else -1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.floats(0.0, 1.0))
def test_pqm_relabel_soundness(seed, p):
    buf, episodes = filled_buffer(seed)
    b = sample_pqm_batch(buf, 64, p_relabel=p, rng=np.random.default_rng(seed))
    for i in range(len(b)):
        ep = episodes[b.episode[i]]
        states = ep.states
        t = b.t[i]
        assert np.array_equal(b.s_t[i], states[t])
        assert np.array_equal(b.s_next[i], states[t + 1])
        assert b.a_t[i] == ep.steps[t].a
        if b.relabeled[i]:
            tf = b.t_future[i]
            assert t <= tf < len(ep)
            assert np.array_equal(b.s_prime[i], states[tf + 1])
            assert any(np.array_equal(b.s_prime[i], x) for x in states[t + 1:])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dqn_relabel_soundness(seed):
    buf, episodes = filled_buffer(seed)
    b = sample_dqn_batch(buf, 64, rng=np.random.default_rng(seed))
    for i, item in enumerate(b.items()):
        ep = episodes[b.episode[i]]
        assert np.array_equal(item.goal.mask, TASK.mask)
        assert item.reward in (-1.0, 0.0)
        assert (item.reward == 0.0) == item.done == bool(goal_achieved(item.s_next, item.goal))
        if b.relabeled[i]:
            later = ep.states[b.t[i] + 1:][:, TASK.mask]
            assert any(np.array_equal(item.goal.values, x) for x in later)
        else:
            assert np.array_equal(item.goal.target, ep.goal.target)


@settings(max_examples=30, deadline=None)
@given(capacity=st.integers(8, 40), lengths=st.lists(st.integers(1, 8), min_size=1, max_size=20))
def test_capacity_never_exceeded(capacity, lengths):
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(capacity)
    stored = []
    for n in lengths:
        ep = random_episode(rng, n)
        buf.store(ep)
        stored.append(n)
        assert buf.n_transitions <= capacity
    # kept episodes are the newest ones
    kept = [e.length for e in buf.episodes]
    assert kept == stored[len(stored) - len(kept):]


def test_sampling_is_deterministic():
    buf, _ = filled_buffer(6)
    a = sample_pqm_batch(buf, 50, rng=np.random.default_rng(9))
    b = sample_pqm_batch(buf, 50, rng=np.random.default_rng(9))
    assert np.array_equal(a.s_prime, b.s_prime) and np.array_equal(a.t, b.t)


def test_relabel_ratio():
    buf, _ = filled_buffer(7, n_episodes=30)
    b = sample_pqm_batch(buf, 10_000, p_relabel=0.8, rng=np.random.default_rng(11))
    assert abs(b.relabeled.mean() - 0.8) <= 0.02
    d = sample_dqn_batch(buf, 10_000, p_relabel=0.8, rng=np.random.default_rng(12))
    assert abs(d.relabeled.mean() - 0.8) <= 0.02


def test_episode_sampling_weighted_by_length():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer()
    buf.store(random_episode(rng, 1))
    buf.store(random_episode(rng, 5))
    b = sample_pqm_batch(buf, 12_000, rng=rng)
    assert abs(np.mean(b.episode == 1) - 5 / 6) < 0.02
