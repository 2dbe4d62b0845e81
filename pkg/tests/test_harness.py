import itertools
import json
import math

import numpy as np
import pytest

from pqmrl.envs import BitFlipEnv, Task, get_task, hamming_oracle
from pqmrl.harness.agents import PQMLearner, evaluate, run_episodes
from pqmrl.harness.checkpoint import (
    Checkpoint,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from pqmrl.harness.cli import main
from pqmrl.harness.config import ConfigError, TrainConfig, make_config, read_config_file
from pqmrl.harness.evaluation import one_step_consistency
from pqmrl.harness.training import (
    METRICS_HEADER,
    EpochMetrics,
    init_state,
    metrics_csv,
    restore_state,
    run_training,
    state_to_checkpoint,
    train_loop,
    transfer_state,
)
from pqmrl.pqm import ExplorationSpec

from oracles import bitflip_critic, overwrite_aimer


def small_config(**kw):
    base = dict(bits=4, epochs=3, seed=1, opt_steps_per_cycle=5, batch_size=32, episodes_per_cycle=4,
                eval_episodes_per_epoch=8, critic_hidden=(16,), aimer_hidden=(16,), record_wall_time=False)
    base.update(kw)
    return make_config("bitflip", **base)


# -- checkpoint format --------------------------------------------------------------------------

def sample_checkpoint():
    return state_to_checkpoint(init_state(small_config()))


def test_checkpoint_layout():
    data = encode_checkpoint(sample_checkpoint())
    assert data[:4] == b"PQM1"
    hlen = int.from_bytes(data[4:12], "little")
    header = json.loads(data[12:12 + hlen])
    n_floats = sum(int(np.prod(t["shape"])) for t in header["tensors"])
    assert len(data) == 12 + hlen + 8 * n_floats + 8
    assert header["config"]["bits"] == 4


def test_checkpoint_round_trip(tmp_path):
    ck = sample_checkpoint()
    p1 = save_checkpoint(tmp_path / "a.pqm", ck)
    loaded = load_checkpoint(p1)
    for name, arr in ck.tensors.items():
        assert np.array_equal(arr, loaded.tensors[name])
    p2 = save_checkpoint(tmp_path / "b.pqm", loaded)
    assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize("cut", [2, 10, 40, -9, -1])
def test_truncated_checkpoint(cut):
    data = encode_checkpoint(sample_checkpoint())
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(data[:cut])


def test_checkpoint_errors_are_distinct():
    data = bytearray(encode_checkpoint(sample_checkpoint()))
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"XXXX" + bytes(data[4:]))
    flipped = bytearray(data)
    flipped[-20] ^= 0xFF
    with pytest.raises(CheckpointChecksumError):
        decode_checkpoint(bytes(flipped))
    with pytest.raises(CheckpointShapeError):
        decode_checkpoint(bytes(data) + b"\0" * 8)
    ck = sample_checkpoint()
    ck.format_version = 99
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(encode_checkpoint(ck))
    ck = sample_checkpoint()
    ck.meta["networks"]["critic"]["layer_sizes"] = [8, 17, 4]
    with pytest.raises(CheckpointShapeError):
        decode_checkpoint(encode_checkpoint(ck))


def test_restore_rejects_other_config():
    ck = sample_checkpoint()
    with pytest.raises(CheckpointError):
        restore_state(ck, small_config(lambda1=5.0))


# -- training loop ------------------------------------------------------------------------------

def test_zero_epochs(tmp_path):
    metrics = run_training(small_config(epochs=0), out_dir=tmp_path)
    assert metrics == []
    assert (tmp_path / "metrics.csv").read_text() == METRICS_HEADER + "\n"
    ck = load_checkpoint(tmp_path / "checkpoint.pqm")
    assert ck.meta["epoch"] == 0 and "critic.W0" in ck.tensors


def test_metrics_csv_format():
    rows = [EpochMetrics(0, 0.5, 3.0, 0.123456789, math.nan, 2.0, 0.0)]
    text = metrics_csv(rows)
    assert text.splitlines()[0] == "epoch,success_rate,median_time_to_goal,critic_loss,actor_loss,aimer_loss,wall_seconds"
    assert text.splitlines()[1] == "0,0.5,3,0.123457,nan,2,0"


def test_metrics_invariants():
    metrics = run_training(small_config(epochs=3))
    assert [m.epoch for m in metrics] == [0, 1, 2]
    for m in metrics:
        assert 0.0 <= m.success_rate <= 1.0
        assert m.median_time_to_goal <= 2
        assert math.isnan(m.actor_loss) and np.isfinite(m.critic_loss) and np.isfinite(m.aimer_loss)


def test_determinism(tmp_path):
    cfg = small_config()
    run_training(cfg, out_dir=tmp_path / "a")
    run_training(cfg, out_dir=tmp_path / "b")
    for name in ("metrics.csv", "checkpoint.pqm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run_training(cfg.replace(seed=2), out_dir=tmp_path / "c")
    assert (tmp_path / "a" / "checkpoint.pqm").read_bytes() != (tmp_path / "c" / "checkpoint.pqm").read_bytes()


@pytest.mark.parametrize("learner", ["pqm", "dqn"])
def test_resume_equals_uninterrupted(tmp_path, learner):
    cfg = small_config(learner=learner, epochs=4, buffer_flush_epochs=2, checkpoint_every=2)
    full = run_training(cfg, out_dir=tmp_path / "full")
    run_training(cfg.replace(epochs=2), out_dir=tmp_path / "half")
    resumed = run_training(cfg, out_dir=tmp_path / "resumed", resume_from=tmp_path / "half" / "checkpoint.pqm")
    assert metrics_csv(full) == metrics_csv(resumed)
    assert (tmp_path / "full" / "checkpoint.pqm").read_bytes() == (tmp_path / "resumed" / "checkpoint.pqm").read_bytes()


def test_periodic_checkpoint_and_early_stop(tmp_path):
    cfg = small_config(epochs=5, checkpoint_every=2)
    metrics = run_training(cfg, out_dir=tmp_path, callback=lambda state, m: m.epoch == 1)
    assert len(metrics) == 2
    assert load_checkpoint(tmp_path / "checkpoint.pqm").meta["epoch"] == 2


def test_evaluation_is_isolated():
    state = init_state(small_config(epochs=2))
    train_loop(state)
    nets = {k: v.copy() for k, v in state.learner.networks().items()}
    n_stored = state.buffer.n_transitions
    rng_state = state.rng.bit_generator.state
    evaluate(state.learner, state.env, state.task, 20, np.random.default_rng(0))
    assert state.buffer.n_transitions == n_stored
    assert state.rng.bit_generator.state == rng_state
    assert all(v.equals(state.learner.networks()[k]) for k, v in nets.items())
    # the evaluation budget does not change the training trajectory
    other = init_state(small_config(epochs=2, eval_episodes_per_epoch=3))
    train_loop(other)
    assert all(v.equals(other.learner.networks()[k]) for k, v in nets.items())


# -- rollouts -----------------------------------------------------------------------------------

def perfect_learner():
    mask = np.array([True, True, False])
    return PQMLearner(bitflip_critic(3), None, overwrite_aimer(mask), ExplorationSpec()), mask


def test_perfect_learner_steps_equal_hamming():
    learner, mask = perfect_learner()
    task = Task("two-bit", mask, 0.0, 1.0, True, 0.0)
    env = BitFlipEnv(3)
    starts, goals = [], []
    for s in itertools.product((0.0, 1.0), repeat=3):
        for g in itertools.product((0.0, 1.0), repeat=2):
            if tuple(s[:2]) != g:
                starts.append(s)
                goals.append(g)
    S, G = np.array(starts), np.array(goals)
    horizon_task = Task("two-bit", mask, 0.0, 1.0, True, 0.0)
    r = run_episodes(learner, env, horizon_task, 0, np.random.default_rng(0), "greedy", starts=(S, G))
    assert r.success.all()
    for s, g, steps in zip(S, G, r.steps_to_goal):
        assert steps == hamming_oracle(s, np.where(mask, np.r_[g, 0.0], s))
    assert task.goal_dim == 2


def test_greedy_rollouts_use_no_randomness():
    learner, mask = perfect_learner()
    task = Task("two-bit", mask, 0.0, 1.0, True, 0.0)
    S = np.array([[0.0, 0.0, 1.0]])
    G = np.array([[1.0, 1.0]])
    a = run_episodes(learner, BitFlipEnv(3), task, 0, np.random.default_rng(0), "greedy", starts=(S, G))
    b = run_episodes(learner, BitFlipEnv(3), task, 0, np.random.default_rng(1), "greedy", starts=(S, G))
    assert np.array_equal(a.episodes[0].states, b.episodes[0].states)
    assert a.steps_to_goal[0] == 2 and a.success[0]


class _StuckLearner:
    """Always flips the last bit, which no task of interest constrains."""

    kind = "stuck"

    def targets(self, S, GV):
        return None

    def act(self, S, GV, H, rng, explore):
        return np.full(len(S), S.shape[1] - 1)


def test_evaluate_degenerate_policy():
    env = BitFlipEnv(6)
    task = get_task(env, "first-half")
    success, ttg = evaluate(_StuckLearner(), env, task, 50, np.random.default_rng(0))
    assert success == 0.0 and ttg == env.horizon(task)
    with pytest.raises(ValueError):
        evaluate(_StuckLearner(), env, task, 0, np.random.default_rng(0))


def test_evaluate_single_episode():
    learner, mask = perfect_learner()
    task = Task("two-bit", mask, 0.0, 1.0, True, 0.0)
    env = BitFlipEnv(3)
    env.tasks["two-bit"] = task
    rng = np.random.default_rng(0)
    s0 = env.sample_states(np.random.default_rng(0), 1)[0]
    success, ttg = evaluate(learner, env, task, 1, rng)
    assert success == 1.0 and 1 <= ttg <= 2 and s0.shape == (3,)


def test_time_to_goal_lower_bound(trained_bitflip6):
    st = trained_bitflip6
    r = run_episodes(st.learner, st.env, st.task, 200, np.random.default_rng(7), "greedy")
    for s, g, ok, steps in zip(r.start_states, r.goal_values, r.success, r.steps_to_goal):
        if ok:
            nearest = s.copy()
            nearest[st.task.mask] = g
            assert steps >= hamming_oracle(s, nearest)
            assert steps >= 1


# -- transfer -----------------------------------------------------------------------------------

def test_transfer_loads_critic_only(tmp_path):
    src_cfg = small_config(task="last-half", epochs=2)
    run_training(src_cfg, out_dir=tmp_path)
    src = load_checkpoint(tmp_path / "checkpoint.pqm")
    cfg = small_config(task="first-half", epochs=2)
    moved = state_to_checkpoint(transfer_state(cfg, tmp_path / "checkpoint.pqm"))
    fresh = state_to_checkpoint(init_state(cfg))
    assert set(moved.tensors) == set(fresh.tensors)
    for name, arr in moved.tensors.items():
        if name.startswith("critic"):
            assert np.array_equal(arr, src.tensors[name])
        else:
            assert name.startswith("aimer")
            assert np.array_equal(arr, fresh.tensors[name])
    assert moved.meta["optimizers"]["critic"] == src.meta["optimizers"]["critic"]
    assert moved.meta["optimizers"]["aimer"]["step_count"] == 0


def test_transfer_checks(tmp_path):
    run_training(small_config(task="last-half", epochs=1), out_dir=tmp_path)
    with pytest.raises(CheckpointError):
        transfer_state(small_config(bits=6), tmp_path / "checkpoint.pqm")
    with pytest.warns(UserWarning):
        transfer_state(small_config(task="last-half"), tmp_path / "checkpoint.pqm")
    with pytest.raises(ConfigError):
        transfer_state(small_config(learner="dqn"), tmp_path / "checkpoint.pqm")


def test_transferred_critic_is_consistent(tmp_path, trained_bitflip6):
    save_checkpoint(tmp_path / "src.pqm", state_to_checkpoint(trained_bitflip6))
    cfg = trained_bitflip6.config.replace(task="last-half")
    state = transfer_state(cfg, tmp_path / "src.pqm")
    err = one_step_consistency(state.learner.critic, None, state.env, 500, np.random.default_rng(0))
    assert err < 0.5
    assert not state.learner.aimer.net.equals(trained_bitflip6.learner.aimer.net)


# -- configuration ------------------------------------------------------------------------------

def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nbits = 8\ncritic_hidden = 32,32\nlambda1=50 # inline\nrecord_wall_time=false\n")
    values = read_config_file(p)
    assert values == {"bits": 8, "critic_hidden": (32, 32), "lambda1": 50.0, "record_wall_time": False}
    p.write_text("nonsense = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(p)


def test_config_validation_and_defaults():
    assert make_config("pointmass").target_update == "cycle"
    assert make_config("bitflip").target_update == "step"
    cfg = make_config("bitflip")
    assert (cfg.opt_steps_per_cycle, cfg.batch_size, cfg.buffer_capacity, cfg.polyak_decay) == (40, 256, 10**6, 0.95)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(lambda1=0.0), dict(batch_size=0), dict(learner="ddpg"), dict(p_relabel=1.5)):
        with pytest.raises(ConfigError):
            make_config("bitflip", **bad)
    with pytest.raises(ConfigError):
        make_config("pointmass", learner="dqn")


# -- command line -------------------------------------------------------------------------------

CLI_SMALL = ["--bits", "4", "--epochs", "2", "--seed", "3"]


def _small_cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text("opt_steps_per_cycle=5\nbatch_size=32\neval_episodes_per_epoch=8\ncritic_hidden=16\naimer_hidden=16\n")
    return str(p)


def test_cli_train_rollout_eval(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = _small_cfg_file(tmp_path)
    assert main(["train", *CLI_SMALL, "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == METRICS_HEADER and len(lines) == 3
    ck = str(out / "checkpoint.pqm")
    assert main(["rollout", "--checkpoint", ck, "--episodes", "3"]) == 0
    printed = [json.loads(x) for x in capsys.readouterr().out.strip().splitlines()[-4:]]
    assert "success_rate" in printed[-1] and printed[0]["episode"] == 0
    assert main(["eval-metric", "--checkpoint", ck, "--pairs", "50", "--out", str(out)]) == 0
    rows = (out / "metric_in_task.csv").read_text().splitlines()
    assert rows[0] == "true_distance,estimate" and len(rows) == 51
    assert main(["train", *CLI_SMALL, "--epochs", "3", "--config", cfg, "--checkpoint", ck,
                 "--out", str(tmp_path / "resumed")]) == 0
    assert len((tmp_path / "resumed" / "metrics.csv").read_text().splitlines()) == 4


def test_cli_transfer(tmp_path):
    cfg = _small_cfg_file(tmp_path)
    assert main(["train", *CLI_SMALL, "--config", cfg, "--task", "last-half", "--out", str(tmp_path / "src")]) == 0
    assert main(["transfer", *CLI_SMALL, "--config", cfg, "--task", "first-half",
                 "--from", str(tmp_path / "src" / "checkpoint.pqm"), "--out", str(tmp_path / "dst")]) == 0
    assert (tmp_path / "dst" / "checkpoint.pqm").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path):
    assert main(["train", "--bogus"]) == 2
    assert main(["train", "--env", "pointmass", "--task", "first-half", "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main([]) == 2
    bad = tmp_path / "bad.pqm"
    bad.write_bytes(b"PQM1" + b"\0" * 3)
    assert main(["rollout", "--checkpoint", str(bad)]) == 4
    assert main(["eval-metric", "--checkpoint", str(tmp_path / "nope.pqm")]) == 4
    out = tmp_path / "div"
    assert main(["train", *CLI_SMALL, "--lambda1", "1e308", "--out", str(out)]) == 3
    assert (out / "diverged.pqm").exists()
