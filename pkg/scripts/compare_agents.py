"""Train one agent on a synthetic market and tabulate it against all rule-based baselines."""

import argparse
from pathlib import Path

from intraday_rl.agents import FirstForecastAgent, PriceForecastAgent, RandomAgent, WindFollowAgent
from intraday_rl.experiments import LEARNING_HYPERPARAMS, LEARNING_MARKET
from intraday_rl.market_data import split_train_test
from intraday_rl.metrics import emit_report, evaluate, format_table
from intraday_rl.ppo import PolicyAgent, PpoTrainer, TrainConfig
from intraday_rl.synthetic import SyntheticConfig, generate_products


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--forecast-noise", type=float, default=0.0, help="std of the price forecast error")
    ap.add_argument("--out", type=Path, default=Path("runs/compare"))
    args = ap.parse_args()

    market = SyntheticConfig(**{**LEARNING_MARKET.to_dict(), "forecast_noise_std": args.forecast_noise})
    split = split_train_test(generate_products(market), 0.1)
    trainer = PpoTrainer(split.train, split.train_stats, LEARNING_HYPERPARAMS,
                         TrainConfig(iterations=args.iterations, seed=args.seed))
    trainer.train(out_dir=args.out / "train")
    agents = {
        "agent": PolicyAgent(trainer.net),
        "bl_first": FirstForecastAgent(),
        "bl_wf": WindFollowAgent(),
        "bl_pf": PriceForecastAgent(),
        "bl_random": RandomAgent(split.train_stats.wind_std),
    }
    report = evaluate(agents, split.test, split.train_stats, seed=args.seed)
    emit_report(report, args.out)
    print(format_table(report), end="")


if __name__ == "__main__":
    main()
