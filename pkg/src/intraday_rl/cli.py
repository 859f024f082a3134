"""Command-line entry point.

Subcommands: ``ingest``, ``synth``, ``train``, ``tune``, ``evaluate``, ``report``.
Every run writes its effective configuration to ``<out>/config.toml``.
Relative ``--out`` paths are resolved against ``$INTRADAY_RL_OUT`` when set.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .agents import BASELINES, RandomAgent
from .config import RunConfig, load_config, save_config
from .errors import IntradayError
from .market_data import (
    aggregate_all, load_dataset, parse_utc, read_day_ahead_csv, read_ticks_csv, save_dataset, split_train_test,
)
from .metrics import emit_report, evaluate, parse_summary
from .nn import ActorCritic
from .pbt import default_search_space, pbt_run, write_history
from .ppo import PolicyAgent, PpoPbtTask, PpoTrainer, write_learning_curve
from .synthetic import SyntheticConfig, attach_forecasts, generate_products

logger = logging.getLogger("intraday_rl")

OUT_ENV = "INTRADAY_RL_OUT"


class UsageError(Exception):
    pass


def _out_dir(arg: str | None, command: str) -> Path:
    root = os.environ.get(OUT_ENV)
    if arg is None:
        return Path(root or "runs") / command
    p = Path(arg)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _require_dir(path: str, what: str) -> None:
    if not Path(path).is_dir():
        raise UsageError(f"{what} not found: {path}")


def cmd_ingest(args) -> int:
    cfg = _load(args.config)
    _require_file(args.ticks, "tick file")
    day_ahead = None
    if args.day_ahead:
        _require_file(args.day_ahead, "day-ahead file")
        day_ahead = read_day_ahead_csv(args.day_ahead)
    if args.outlier_upper is not None:
        cfg.env.outlier_upper = args.outlier_upper
    if args.outlier_lower is not None:
        cfg.env.outlier_lower = args.outlier_lower
    if args.test_after:
        cfg.env.test_after = args.test_after
    if args.test_fraction is not None:
        cfg.env.test_fraction = args.test_fraction
    products = aggregate_all(read_ticks_csv(args.ticks), day_ahead)
    attach_forecasts(products, cfg.synthetic)
    split = _split(products, cfg)
    out = _out_dir(args.out, "ingest")
    save_dataset(split, out)
    save_config(cfg, out / "config.toml")
    print(f"{len(split.train)} train / {len(split.test)} test products, "
          f"{split.removed_outliers} training outliers removed -> {out}")
    return 0


def _split(products, cfg: RunConfig):
    test_after = parse_utc(cfg.env.test_after) if cfg.env.test_after else None
    return split_train_test(products, cfg.env.test_fraction, test_after, cfg.env.outlier_upper, cfg.env.outlier_lower)


def cmd_synth(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        cfg.synthetic = SyntheticConfig.from_dict({**cfg.synthetic.to_dict(), "seed": args.seed})
    split = _split(generate_products(cfg.synthetic), cfg)
    out = _out_dir(args.out, "synth")
    save_dataset(split, out)
    save_config(cfg, out / "config.toml")
    print(f"{len(split.train)} train / {len(split.test)} test products -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args.config)
    _require_dir(args.data, "data directory")
    if args.iterations is not None:
        cfg.train.iterations = args.iterations
    if args.seed is not None:
        cfg.train.seed = args.seed
    split = load_dataset(args.data)
    out = _out_dir(args.out, "train")
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")
    trainer = PpoTrainer(split.train, split.train_stats, cfg.ppo, cfg.train)
    curve = trainer.train(out_dir=out)
    print(f"trained {trainer.iteration} iterations, final validation profit {curve[-1]['mean_profit']:.2f} -> {out}")
    return 0


def cmd_tune(args) -> int:
    cfg = _load(args.config)
    _require_dir(args.data, "data directory")
    for key in ("population", "eval_interval", "budget"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg.pbt, key, val)
    if args.seed is not None:
        cfg.pbt.seed = args.seed
    split = load_dataset(args.data)
    out = _out_dir(args.out, "tune")
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")
    task = PpoPbtTask(split.train, split.train_stats, cfg.ppo, cfg.train)
    result = pbt_run(cfg.pbt.population, cfg.pbt.eval_interval, cfg.pbt.budget, default_search_space(),
                     task.init, task.train, task.evaluate, task.copy, seed=cfg.pbt.seed, quantile=cfg.pbt.quantile)
    write_history(result.history, out / "pbt_history.csv")
    best = result.best
    best.state.save_checkpoint(out / "best_checkpoint")
    write_learning_curve(best.state.curve, out / "best_learning_curve.csv")
    best_cfg = RunConfig.from_dict({**cfg.to_dict(), "ppo": task.hyperparams(best.hyperparams).to_dict()})
    save_config(best_cfg, out / "best_config.toml")
    print(f"best member {best.member_id}: score {best.score:.2f} -> {out}")
    return 0


def build_agents(names, checkpoint: str | None, train_stats, seed: int) -> dict:
    agents = {}
    for name in names:
        if name == "agent":
            if checkpoint is None:
                raise UsageError("agent 'agent' requires --checkpoint")
            _require_dir(checkpoint, "checkpoint")
            agents[name] = PolicyAgent(ActorCritic.load(checkpoint))
        elif name == "bl_random":
            agents[name] = RandomAgent(train_stats.wind_std, seed=seed)
        elif name in BASELINES:
            agents[name] = BASELINES[name]()
        else:
            raise UsageError(f"unknown agent {name!r}; choose from agent, {', '.join(BASELINES)}")
    return agents


def cmd_evaluate(args) -> int:
    cfg = _load(args.config)
    _require_dir(args.data, "data directory")
    if args.agents:
        cfg.evaluate.agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    if args.seed is not None:
        cfg.evaluate.seed = args.seed
    if not cfg.evaluate.agents:
        raise UsageError("no agents given")
    split = load_dataset(args.data)
    agents = build_agents(cfg.evaluate.agents, args.checkpoint, split.train_stats, cfg.evaluate.seed)
    report = evaluate(agents, split.test, split.train_stats, seed=cfg.evaluate.seed, fee=cfg.env.fee)
    out = _out_dir(args.out, "evaluate")
    emit_report(report, out)
    save_config(cfg, out / "config.toml")
    print((out / "table.txt").read_text(), end="")
    return 0


def cmd_report(args) -> int:
    _require_file(args.summary, "summary file")
    report = parse_summary(args.summary)
    out = _out_dir(args.out, "report")
    emit_report(report, out, formats=("text", "csv"))
    save_config(_load(args.config), out / "config.toml")
    print((out / "table.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intraday-rl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="aggregate transaction ticks into minute product series")
    s.add_argument("--ticks", required=True)
    s.add_argument("--day-ahead")
    s.add_argument("--out")
    s.add_argument("--test-after", help="ISO date; products delivered on/after it form the test set")
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--outlier-upper", type=float)
    s.add_argument("--outlier-lower", type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a PPO agent")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("tune", help="population-based hyperparameter search")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--population", type=int)
    s.add_argument("--eval-interval", type=int)
    s.add_argument("--budget", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("evaluate", help="evaluate agents on the test products")
    s.add_argument("--config")
    s.add_argument("--checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--agents")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="re-render tables from a summary.json")
    s.add_argument("--summary", required=True)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (IntradayError, OSError, ValueError, KeyError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
