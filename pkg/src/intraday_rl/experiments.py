"""Reproducible experiment drivers shared by the scripts and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .agents import WindFollowAgent
from .env import hindsight_upper_bound
from .market_data import split_train_test
from .metrics import evaluate
from .pbt import QuadraticTask, pbt_run, random_search, sample_hyperparams
from .ppo import HyperParams, PolicyAgent, PpoTrainer, TrainConfig
from .synthetic import SyntheticConfig, generate_products

# Triangle-wave market with mean-reverting noise and exact forecasts: the
# price cycle is learnable, so a trained policy can beat wind following.
LEARNING_MARKET = SyntheticConfig(
    n_products=300, wave_amplitude=10.0, wave_period=60.0, volatility=0.2, mean_reversion=0.1,
    forecast_noise_std=0.0, seed=1,
)

# Discounted returns let the critic credit a sale with the later buy-back.
LEARNING_HYPERPARAMS = HyperParams(gamma=1.0, gae_lambda=0.95, lr=3e-4, reward_scale=0.05)


@dataclass
class LearningResult:
    seed: int
    iterations: int
    seconds: float
    agent_mean: float
    wind_follow_mean: float
    upper_bound_mean: float
    curve: list

    @property
    def gain_over_wind_follow(self) -> float:
        return self.agent_mean / self.wind_follow_mean

    @property
    def share_of_upper_bound(self) -> float:
        return self.agent_mean / self.upper_bound_mean


def run_learning_experiment(seed: int, iterations: int = 200, market: SyntheticConfig = LEARNING_MARKET,
                            hp: HyperParams = LEARNING_HYPERPARAMS) -> LearningResult:
    """Train PPO on the learning market and score it on the held-out products."""
    split = split_train_test(generate_products(market), 0.1)
    trainer = PpoTrainer(split.train, split.train_stats, hp, TrainConfig(iterations=iterations, seed=seed))
    start = time.perf_counter()
    curve = trainer.train()
    seconds = time.perf_counter() - start
    report = evaluate({"agent": PolicyAgent(trainer.net), "bl_wf": WindFollowAgent()}, split.test,
                      split.train_stats)
    bound = np.mean([hindsight_upper_bound(p) for p in split.test])
    return LearningResult(seed, iterations, seconds, report.summaries["agent"].mean,
                          report.summaries["bl_wf"].mean, float(bound), curve)


def pbt_vs_random_search(seed: int, population: int = 8, eval_interval: int = 5, budget: int = 40):
    """Best final scores of PBT and random search on the quadratic surrogate.

    Both start from the same sampled hyperparameters and spend the same
    number of training iterations per member.
    """
    task = QuadraticTask()
    initial = [sample_hyperparams(task.space, np.random.default_rng([seed, i])) for i in range(population)]
    pbt = pbt_run(population, eval_interval, budget, task.space, task.init, task.train, task.evaluate,
                  seed=seed, initial_hyperparams=initial)
    rs = random_search(population, budget, task.space, task.init, task.train, task.evaluate,
                       initial_hyperparams=initial)
    return pbt, rs
