"""Goal-conditioned RL with a planning quasi-metric and task-specific aimers."""

from .estimators import DQNAgent, PQMAgent
from .harness.config import TrainConfig, make_config
from .harness.training import run_training, run_transfer

__version__ = "0.1.0"

__all__ = ["DQNAgent", "PQMAgent", "TrainConfig", "make_config", "run_training", "run_transfer"]
