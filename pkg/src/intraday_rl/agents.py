"""Agent interface and the rule-based baselines.

Every agent maps ``(observation, view)`` to a target volume in [0, 1]. The
observation is the normalized feature vector; ``view`` exposes the raw market
quantities (see :class:`intraday_rl.env.MarketView`). Terminal correction is
never an agent concern: the evaluation environment applies it.
"""

from __future__ import annotations

import numpy as np

from .env import MarketView

PF_STEP = 0.1
RANDOM_TRADE_PROB = 0.25


def _clip01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


class Agent:
    name = "agent"

    def reset(self) -> None:
        pass

    def act(self, observation: np.ndarray, view: MarketView) -> float:
        raise NotImplementedError


class FirstForecastAgent(Agent):
    """Sell the first wind forecast at the first step, then hold."""

    name = "bl_first"

    def act(self, observation, view):
        if view.t == 0:
            return _clip01(view.wind)
        return view.volume


class WindFollowAgent(Agent):
    """Hold exactly the current wind forecast."""

    name = "bl_wf"

    def act(self, observation, view):
        return _clip01(view.wind)


class PriceForecastAgent(Agent):
    """Trade 0.1 MWh when the price forecast sits on the same side of the price twice in a row.

    Forecast below price for the current and previous minute means prices are
    expected to fall, so sell; forecast above price for both means buy back.
    """

    name = "bl_pf"

    def __init__(self, step: float = PF_STEP):
        self.step = step

    def act(self, observation, view):
        falling = view.price_forecast < view.price and view.prev_price_forecast < view.prev_price
        rising = view.price_forecast > view.price and view.prev_price_forecast > view.prev_price
        if falling:
            return min(view.volume + self.step, 1.0)
        if rising:
            return max(view.volume - self.step, 0.0)
        return view.volume


class RandomAgent(Agent):
    """With probability 0.25 draw a new volume around the wind forecast, else hold."""

    name = "bl_random"

    def __init__(self, sigma: float, seed: int = 0, prob: float = RANDOM_TRADE_PROB):
        self.sigma = float(sigma)
        self.prob = prob
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def act(self, observation, view):
        # both draws happen every step so the stream does not depend on outcomes
        u = self.rng.random()
        z = self.rng.standard_normal()
        if u < self.prob:
            return _clip01(view.wind + self.sigma * z)
        return view.volume


BASELINES = {
    "bl_first": FirstForecastAgent,
    "bl_wf": WindFollowAgent,
    "bl_pf": PriceForecastAgent,
    "bl_random": RandomAgent,
}
