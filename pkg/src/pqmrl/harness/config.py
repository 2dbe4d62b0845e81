"""Experiment configuration: defaults per environment, ``key=value`` files, validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "bitflip"
    bits: int = 12
    task: str = "first-half"
    learner: str = "pqm"
    epochs: int = 200
    cycles_per_epoch: int = 1
    episodes_per_cycle: int = 16
    opt_steps_per_cycle: int = 40
    batch_size: int = 256
    buffer_capacity: int = 10**6
    polyak_decay: float = 0.95
    target_update: str = "step"  # "step" or "cycle"
    lambda1: float = 100.0
    lambda2: float = 0.0
    p_relabel: float = 0.8
    aimer_hindsight_fraction: float = 0.5
    epsilon: float = 0.2
    gaussian_sigma: float = 0.2
    random_action_prob: float = 0.3
    actor_preactivation_weight: float = 1.0
    learning_rate: float = 1e-3
    gamma: float = 0.98
    critic_hidden: Tuple[int, ...] = (256,)
    actor_hidden: Tuple[int, ...] = (64, 64, 64)
    aimer_hidden: Tuple[int, ...] = (256,)
    seed: int = 0
    transfer_from: Optional[str] = None
    eval_episodes_per_epoch: int = 100
    aimer_recompute: str = "per_step"
    checkpoint_every: int = 10
    buffer_flush_epochs: int = 0
    record_wall_time: bool = True

    def validate(self) -> "TrainConfig":
        if self.env not in ENV_DEFAULTS:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.learner not in ("pqm", "dqn"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.learner == "dqn" and self.env != "bitflip":
            raise ConfigError("the DQN baseline supports the bit-flip environment only")
        if self.env == "bitflip" and self.bits < 2:
            raise ConfigError("bits must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        for name in ("cycles_per_epoch", "episodes_per_cycle", "opt_steps_per_cycle", "batch_size",
                     "buffer_capacity", "eval_episodes_per_epoch", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.buffer_flush_epochs < 0:
            raise ConfigError("buffer_flush_epochs must be non-negative")
        if self.lambda1 <= 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 must be positive and lambda2 non-negative")
        for name in ("p_relabel", "aimer_hindsight_fraction", "epsilon", "random_action_prob", "polyak_decay"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.target_update not in ("step", "cycle"):
            raise ConfigError("target_update must be 'step' or 'cycle'")
        if self.aimer_recompute not in ("per_step", "per_episode"):
            raise ConfigError("aimer_recompute must be 'per_step' or 'per_episode'")
        return self

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        for k in ("critic_hidden", "actor_hidden", "aimer_hidden"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("critic_hidden", "actor_hidden", "aimer_hidden"):
            if k in d:
                d[k] = tuple(int(v) for v in d[k])
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


ENV_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "bitflip": {},
    "pointmass": dict(
        task="reach-pos",
        epochs=50,
        cycles_per_epoch=10,
        episodes_per_cycle=2,
        target_update="cycle",
        lambda1=500.0,
        lambda2=50.0,
        critic_hidden=(64, 64, 64),
        actor_hidden=(64, 64, 64),
        aimer_hidden=(64, 64, 64),
        eval_episodes_per_epoch=50,
    ),
}

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(TrainConfig)}


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(TrainConfig(), key)
    raw = raw.strip()
    try:
        if key.endswith("_hidden"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if key == "transfer_from":
            return raw or None
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}")


def read_config_file(path) -> Dict[str, Any]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = parse_value(key, value)
    return out


def make_config(env: str = "bitflip", **overrides) -> TrainConfig:
    """Defaults for ``env`` with ``overrides`` applied on top."""
    if env not in ENV_DEFAULTS:
        raise ConfigError(f"unknown env {env!r}")
    values = dict(ENV_DEFAULTS[env])
    values.update(overrides)
    values["env"] = env
    try:
        cfg = TrainConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError(str(exc))
    return cfg.validate()
