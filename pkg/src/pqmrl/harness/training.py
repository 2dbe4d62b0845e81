"""Training loop, transfer runs, metrics CSV and learner (de)serialisation."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..envs import get_task, make_env
from ..nn import AdamState, DivergenceError, ParameterSet
from ..replay import ReplayBuffer
from .agents import build_learner, evaluate, run_episodes
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,success_rate,median_time_to_goal,critic_loss,actor_loss,aimer_loss,wall_seconds"
METRIC_FIELDS = METRICS_HEADER.split(",")
_EVAL_STREAM = 0x5EED_E7A1
CHECKPOINT_NAME = "checkpoint.pqm"
METRICS_NAME = "metrics.csv"


@dataclass
class EpochMetrics:
    epoch: int
    success_rate: float
    median_time_to_goal: float
    critic_loss: float = math.nan
    actor_loss: float = math.nan
    aimer_loss: float = math.nan
    wall_seconds: float = 0.0

    def row(self) -> str:
        vals = [str(self.epoch)] + [format(getattr(self, k), ".6g") for k in METRIC_FIELDS[1:]]
        return ",".join(vals)

    def to_dict(self):
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def metrics_csv(metrics: List[EpochMetrics]) -> str:
    return "\n".join([METRICS_HEADER] + [m.row() for m in metrics]) + "\n"


def write_metrics_csv(path, metrics: List[EpochMetrics]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv(metrics))
    return path


def eval_rng(seed: int, epoch: int) -> np.random.Generator:
    """Evaluation stream for one epoch; disjoint from the training streams."""
    return np.random.default_rng([seed, _EVAL_STREAM, epoch])


@dataclass
class TrainState:
    config: TrainConfig
    env: object
    task: object
    learner: object
    rng: np.random.Generator
    buffer: ReplayBuffer
    epoch: int = 0
    metrics: List[EpochMetrics] = field(default_factory=list)


def init_state(config: TrainConfig) -> TrainState:
    config.validate()
    env = make_env(config.env, config.bits)
    try:
        task = get_task(env, config.task)
    except ValueError as exc:
        raise ConfigError(str(exc))
    init_ss, train_ss = np.random.SeedSequence(config.seed).spawn(2)
    learner = build_learner(config, env, task, np.random.default_rng(init_ss))
    return TrainState(config, env, task, learner, np.random.default_rng(train_ss),
                      ReplayBuffer(config.buffer_capacity))


# -- serialisation -----------------------------------------------------------------------------

def _net_tensors(role: str, net: ParameterSet, out: Dict[str, np.ndarray], meta: Dict):
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{role}.W{l}"] = w
        out[f"{role}.b{l}"] = b
    meta[role] = {"layer_sizes": list(net.layer_sizes), "hidden_activation": net.hidden_activation,
                  "output_activation": net.output_activation}


def _opt_tensors(role: str, opt: AdamState, out: Dict[str, np.ndarray], meta: Dict):
    for i, (m, v) in enumerate(zip(opt.first_moment, opt.second_moment)):
        out[f"{role}.adam.m{i}"] = m
        out[f"{role}.adam.v{i}"] = v
    meta[role] = {"step_count": opt.step_count, "learning_rate": opt.learning_rate, "beta1": opt.beta1,
                  "beta2": opt.beta2, "epsilon": opt.epsilon, "n_arrays": len(opt.first_moment)}


def state_to_checkpoint(state: TrainState) -> Checkpoint:
    tensors: Dict[str, np.ndarray] = {}
    nets_meta: Dict = {}
    opts_meta: Dict = {}
    for role, net in state.learner.networks().items():
        _net_tensors(role, net, tensors, nets_meta)
    for role, opt in state.learner.optimizers().items():
        _opt_tensors(role, opt, tensors, opts_meta)
    meta = {
        "learner": state.learner.kind,
        "epoch": state.epoch,
        "networks": nets_meta,
        "optimizers": opts_meta,
        "rng_state": state.rng.bit_generator.state,
        "metrics": [m.to_dict() for m in state.metrics],
    }
    return Checkpoint(state.config.to_dict(), tensors, meta)


def networks_from_checkpoint(ckpt: Checkpoint, roles=None) -> Dict[str, ParameterSet]:
    nets = {}
    for role, info in ckpt.meta.get("networks", {}).items():
        if roles is not None and role not in roles:
            continue
        n = len(info["layer_sizes"]) - 1
        nets[role] = ParameterSet(
            tuple(info["layer_sizes"]),
            [ckpt.tensors[f"{role}.W{l}"].copy() for l in range(n)],
            [ckpt.tensors[f"{role}.b{l}"].copy() for l in range(n)],
            info["hidden_activation"], info["output_activation"],
        )
    return nets


def optimizers_from_checkpoint(ckpt: Checkpoint, roles=None) -> Dict[str, AdamState]:
    opts = {}
    for role, info in ckpt.meta.get("optimizers", {}).items():
        if roles is not None and role not in roles:
            continue
        k = info["n_arrays"]
        opts[role] = AdamState(
            [ckpt.tensors[f"{role}.adam.m{i}"].copy() for i in range(k)],
            [ckpt.tensors[f"{role}.adam.v{i}"].copy() for i in range(k)],
            info["step_count"], info["learning_rate"], info["beta1"], info["beta2"], info["epsilon"],
        )
    return opts


def _check_shapes(state: TrainState, nets: Dict[str, ParameterSet]):
    current = state.learner.networks()
    for role, net in nets.items():
        if role in current and current[role].layer_sizes != net.layer_sizes:
            raise CheckpointError(
                f"checkpoint network {role!r} has layers {net.layer_sizes}, run expects {current[role].layer_sizes}")


def restore_state(ckpt: Checkpoint, config: Optional[TrainConfig] = None) -> TrainState:
    """Rebuild a training state from a checkpoint (buffer starts empty)."""
    saved = TrainConfig.from_dict(ckpt.config)
    config = config or saved
    if config.replace(epochs=saved.epochs) != saved:
        raise CheckpointError("checkpoint was written by a different configuration")
    state = init_state(config)
    nets = networks_from_checkpoint(ckpt)
    _check_shapes(state, nets)
    state.learner.set_state(nets, optimizers_from_checkpoint(ckpt))
    state.rng.bit_generator.state = ckpt.meta["rng_state"]
    state.epoch = int(ckpt.meta["epoch"])
    state.metrics = [EpochMetrics(**m) for m in ckpt.meta.get("metrics", [])]
    return state


# -- training ----------------------------------------------------------------------------------

def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan


def train_epoch(state: TrainState) -> EpochMetrics:
    cfg, env, task, learner = state.config, state.env, state.task, state.learner
    t0 = time.perf_counter()
    if cfg.buffer_flush_epochs and state.epoch % cfg.buffer_flush_epochs == 0:
        state.buffer.clear()
    losses: Dict[str, list] = {}
    for _ in range(cfg.cycles_per_epoch):
        rollouts = run_episodes(learner, env, task, cfg.episodes_per_cycle, state.rng, "explore")
        for ep in rollouts.episodes:
            state.buffer.store(ep)
        for _ in range(cfg.opt_steps_per_cycle):
            for k, v in learner.update(state.buffer, cfg, env, task, state.rng).items():
                losses.setdefault(k, []).append(v)
            if cfg.target_update == "step":
                learner.polyak(cfg.polyak_decay)
        if cfg.target_update == "cycle":
            learner.polyak(cfg.polyak_decay)
    success, median_ttg = evaluate(learner, env, task, cfg.eval_episodes_per_epoch, eval_rng(cfg.seed, state.epoch))
    wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
    m = EpochMetrics(state.epoch, success, median_ttg, _mean(losses.get("critic_loss")),
                     _mean(losses.get("actor_loss")), _mean(losses.get("aimer_loss")), wall)
    state.metrics.append(m)
    state.epoch += 1
    return m


def _save(state: TrainState, out_dir, name=CHECKPOINT_NAME):
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / name, state_to_checkpoint(state))
        write_metrics_csv(Path(out_dir) / METRICS_NAME, state.metrics)


def train_loop(state: TrainState, out_dir=None, callback=None) -> List[EpochMetrics]:
    cfg = state.config
    try:
        while state.epoch < cfg.epochs:
            m = train_epoch(state)
            log.info("epoch %d success %.3f ttg %.1f critic %.4g aimer %.4g", m.epoch, m.success_rate,
                     m.median_time_to_goal, m.critic_loss, m.aimer_loss)
            stop = callback is not None and callback(state, m)
            if stop:
                break
            if state.epoch % cfg.checkpoint_every == 0 and state.epoch < cfg.epochs:
                _save(state, out_dir)
    except DivergenceError:
        _save(state, out_dir, "diverged.pqm")
        raise
    _save(state, out_dir)
    return state.metrics


def run_training(config: TrainConfig, out_dir=None, resume_from=None, callback=None) -> List[EpochMetrics]:
    """Train from scratch (or resume from a checkpoint) and return one EpochMetrics per epoch.

    ``callback(state, metrics)`` runs after every epoch; a true return value
    stops training early.

    With ``out_dir`` set, ``metrics.csv`` and ``checkpoint.pqm`` are written
    there (every ``checkpoint_every`` epochs and at the end).
    """
    if config.transfer_from and resume_from is None:
        return run_transfer(config, config.transfer_from, out_dir, callback)
    if resume_from is not None:
        state = restore_state(load_checkpoint(resume_from), config)
    else:
        state = init_state(config)
    return train_loop(state, out_dir, callback)


TRANSFER_ROLES = ("critic", "critic_target", "actor", "actor_target")
TRANSFER_OPTIMIZERS = ("critic", "actor")


def transfer_state(config: TrainConfig, source) -> TrainState:
    """Fresh run for ``config`` whose quasi-metric (and actor) come from ``source``."""
    ckpt = source if isinstance(source, Checkpoint) else load_checkpoint(source)
    src = TrainConfig.from_dict(ckpt.config)
    if ckpt.meta.get("learner") != "pqm" or config.learner != "pqm":
        raise ConfigError("transfer needs a PQM source checkpoint and a PQM learner")
    if (src.env, src.bits if src.env == "bitflip" else 0) != (config.env, config.bits if config.env == "bitflip" else 0):
        raise CheckpointError(f"source checkpoint is for {src.env}({src.bits}), run is {config.env}({config.bits})")
    if src.task == config.task:
        warnings.warn("transfer source and target use the same task", stacklevel=2)
    state = init_state(config)
    nets = networks_from_checkpoint(ckpt, TRANSFER_ROLES)
    _check_shapes(state, nets)
    opts = optimizers_from_checkpoint(ckpt, TRANSFER_OPTIMIZERS)
    state.learner.set_state(nets, opts)
    return state


def run_transfer(config: TrainConfig, source_checkpoint, out_dir=None, callback=None) -> List[EpochMetrics]:
    return train_loop(transfer_state(config, source_checkpoint), out_dir, callback)
