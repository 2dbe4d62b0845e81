"""Command line entry point: ``pqmrl train | transfer | eval-metric | rollout``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..envs import get_task, make_env
from ..nn import DivergenceError
from .agents import run_episodes
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, make_config, read_config_file
from .evaluation import eval_metric_accuracy, spearman, write_metric_csv
from .training import CHECKPOINT_NAME, METRICS_NAME, restore_state, run_training, run_transfer

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_CHECKPOINT = 0, 2, 3, 4

# flag name -> TrainConfig field
_FLAG_FIELDS = {
    "bits": "bits", "task": "task", "learner": "learner", "epochs": "epochs", "seed": "seed",
    "lambda1": "lambda1", "lambda2": "lambda2",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p):
    p.add_argument("--config", help="key=value file overriding defaults (flags override the file)")
    p.add_argument("--env", choices=["bitflip", "pointmass"])
    p.add_argument("--bits", type=int)
    p.add_argument("--task", choices=["first-half", "last-half", "reach-pos", "reach-x"])
    p.add_argument("--learner", choices=["pqm", "dqn"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--out", default="runs/latest", help="output directory (default: runs/latest)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pqmrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a learner and write metrics.csv + checkpoint.pqm")
    _common(p)
    p.add_argument("--checkpoint", help="resume from this checkpoint")

    p = sub.add_parser("transfer", help="reuse a trained quasi-metric on a new task with a fresh aimer")
    _common(p)
    p.add_argument("--from", dest="source", required=True, help="source checkpoint")

    p = sub.add_parser("eval-metric", help="compare the quasi-metric with the exact oracle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--pair-mode", choices=["in_task", "random"], default="in_task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/latest")

    p = sub.add_parser("rollout", help="run greedy episodes from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args, base: dict = None) -> TrainConfig:
    values = dict(base or {})
    if args.config:
        values.update(read_config_file(args.config))
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    env = args.env or values.pop("env", "bitflip")
    values.pop("env", None)
    return make_config(env, **values)


def _print_metrics(metrics):
    for m in metrics:
        print(f"epoch {m.epoch:4d}  success {m.success_rate:.3f}  time-to-goal {m.median_time_to_goal:.1f}")


def _train(args):
    out = Path(args.out)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        config = config_from_args(args, ckpt.config)
        metrics = run_training(config, out_dir=out, resume_from=args.checkpoint)
    else:
        metrics = run_training(config_from_args(args), out_dir=out)
    _print_metrics(metrics[-5:])
    print(f"wrote {out / METRICS_NAME} and {out / CHECKPOINT_NAME}")


def _transfer(args):
    out = Path(args.out)
    config = config_from_args(args).replace(transfer_from=args.source)
    metrics = run_transfer(config, args.source, out_dir=out)
    _print_metrics(metrics[-5:])
    print(f"wrote {out / METRICS_NAME} and {out / CHECKPOINT_NAME}")


def _eval_metric(args):
    state = restore_state(load_checkpoint(args.checkpoint))
    learner = state.learner
    if learner.kind != "pqm":
        raise ConfigError("eval-metric needs a PQM checkpoint")
    rng = np.random.default_rng(args.seed)
    table = eval_metric_accuracy(learner.critic, learner.actor, state.env, state.task, args.pairs,
                                 args.pair_mode, rng)
    path = write_metric_csv(Path(args.out) / f"metric_{args.pair_mode}.csv", table)
    print(f"spearman {spearman(table):.4f} over {len(table)} {args.pair_mode} pairs; wrote {path}")


def _rollout(args):
    state = restore_state(load_checkpoint(args.checkpoint))
    env = make_env(state.config.env, state.config.bits)
    task = get_task(env, state.config.task)
    r = run_episodes(state.learner, env, task, args.episodes, np.random.default_rng(args.seed), "greedy")
    for i in range(args.episodes):
        print(json.dumps({"episode": i, "success": bool(r.success[i]), "steps_to_goal": int(r.steps_to_goal[i]),
                          "start": r.start_states[i].round(4).tolist(), "goal": r.goal_values[i].round(4).tolist()}))
    print(json.dumps({"success_rate": float(r.success.mean()), "median_time_to_goal": float(np.median(r.steps_to_goal))}))


_COMMANDS = {"train": _train, "transfer": _transfer, "eval-metric": _eval_metric, "rollout": _rollout}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
