"""Minute-resolution MDP over one hourly product.

The agent's action is the total volume sold so far, ``a_t`` in [0, 1] MWh.
Each step trades ``a_t - a_{t-1}`` at the current minute VWAP and pays a
per-MWh fee. Two terminal conventions exist:

* ``training``: the last step additionally returns a quadratic penalty on the
  gap between the final wind forecast and the held volume.
* ``evaluation``: the held volume is forced onto the final wind forecast by a
  correcting trade at the last price, fee included. This is the setting all
  agents are compared under.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import EPISODE_LENGTH, TRANSACTION_FEE
from .errors import AgentViolation, EpisodeDone, IncompleteEpisode, IncompleteProduct
from .market_data import ProductSeries, TrainStats

T_LAST = EPISODE_LENGTH - 1
VOLUME_PENALTY = 0.1
N_FEATURES = 12

FEATURES = (
    "price", "prev_price", "day_ahead", "price_forecast", "diff", "prev_diff",
    "portfolio_price", "marker", "wind", "volume", "vol_diff", "tte",
)
_LEVEL = np.array([1, 1, 1, 1, 0, 0, 1, 0, 0, 0, 0, 0], dtype=bool)
_SCALED = np.array([1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0], dtype=bool)

MODES = ("training", "evaluation")


def trade_reward(price: float, prev_volume: float, volume: float, fee: float = TRANSACTION_FEE) -> float:
    dv = volume - prev_volume
    return price * dv - fee * abs(dv)


def volume_reward(wind: float, volume: float, coef: float = VOLUME_PENALTY) -> float:
    gap = wind - volume
    return -coef * gap * gap


def price_marker(diff: float, prev_diff: float) -> int:
    if diff > 0 and prev_diff > 0:
        return 1
    if diff < 0 and prev_diff < 0:
        return -1
    return 0


@dataclass
class TradeRecord:
    t: int
    price: float
    action: float
    delta_v: float
    fee: float
    reward: float
    forced: bool = False


@dataclass
class EnvState:
    t: int = 0
    a_prev: float = 0.0
    portfolio_price: float = 0.0
    cash: float = 0.0
    fees_paid: float = 0.0


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MarketView:
    """Raw, unnormalized quantities agents may inspect at the current step."""

    t: int
    price: float
    prev_price: float
    price_forecast: float
    prev_price_forecast: float
    wind: float
    volume: float
    day_ahead: float


class TradingEnv:
    def __init__(
        self,
        stats: TrainStats,
        fee: float = TRANSACTION_FEE,
        mode: str = "training",
        volume_penalty: float = VOLUME_PENALTY,
        clamp: bool = True,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.stats = stats
        self.fee = fee
        self.mode = mode
        self.volume_penalty = volume_penalty
        self.clamp = clamp
        self.product: ProductSeries | None = None
        self.state = EnvState()
        self.records: list[TradeRecord] = []
        self.done = False
        n = np.where(_LEVEL, stats.price_mean, 0.0)
        s = np.where(_SCALED, stats.price_std, 1.0)
        self._shift, self._scale = n, s

    def reset(self, product: ProductSeries, mode: str | None = None) -> np.ndarray:
        if not product.is_complete():
            raise IncompleteProduct(f"product {product.name} lacks a complete series or forecast")
        if mode is not None:
            if mode not in MODES:
                raise ValueError(f"mode must be one of {MODES}")
            self.mode = mode
        self.product = product
        self._p = product.prices
        self._f = product.forecast.price_5min
        self._w = product.forecast.wind
        self.state = EnvState()
        self.records = []
        self.done = False
        return self.observe()

    def _idx(self) -> int:
        return min(self.state.t, T_LAST)

    def view(self) -> MarketView:
        t = self._idx()
        tp = max(t - 1, 0)
        return MarketView(
            t=t,
            price=float(self._p[t]),
            prev_price=float(self._p[tp]),
            price_forecast=float(self._f[t]),
            prev_price_forecast=float(self._f[tp]),
            wind=float(self._w[t]),
            volume=self.state.a_prev,
            day_ahead=self.product.day_ahead_price,
        )

    def raw_observation(self) -> np.ndarray:
        t = self._idx()
        tp = max(t - 1, 0)
        p, pp = self._p[t], self._p[tp]
        f, fp = self._f[t], self._f[tp]
        d, dp = p - f, pp - fp
        eta = self._w[t]
        a = self.state.a_prev
        return np.array([
            p, pp, self.product.day_ahead_price, f, d, dp, self.state.portfolio_price,
            price_marker(d, dp), eta, a, eta - a, 1.0 - t / T_LAST,
        ])

    def observe(self) -> np.ndarray:
        return (self.raw_observation() - self._shift) / self._scale

    def _execute(self, t: int, price: float, volume: float, forced: bool) -> tuple[float, TradeRecord]:
        st = self.state
        dv = volume - st.a_prev
        fee = self.fee * abs(dv)
        flow = price * dv - fee
        if volume <= 0.0:
            st.portfolio_price = 0.0
        elif dv > 0:
            st.portfolio_price = (st.portfolio_price * st.a_prev + price * dv) / (st.a_prev + dv)
        st.cash += flow
        st.fees_paid += fee
        st.a_prev = volume
        rec = TradeRecord(t, price, volume, dv, fee, flow, forced)
        self.records.append(rec)
        return flow, rec

    def step(self, action: float) -> StepResult:
        if self.done:
            raise EpisodeDone("step called on a finished episode")
        action = float(action)
        if math.isnan(action):
            raise ValueError("action is NaN")
        a = min(max(action, 0.0), 1.0)
        clamped = a != action
        if clamped and not self.clamp:
            raise AgentViolation(f"action {action} outside [0, 1]")
        t = self.state.t
        price = float(self._p[t])
        reward, rec = self._execute(t, price, a, forced=False)
        info = {"t": t, "price": price, "delta_v": rec.delta_v, "fee": rec.fee, "clamped": clamped,
                "r_trade": reward, "r_vol": 0.0}
        done = t == T_LAST
        if done:
            eta = float(self._w[t])
            if self.mode == "training":
                r_vol = volume_reward(eta, a, self.volume_penalty)
                rec.reward += r_vol
                reward += r_vol
                info["r_vol"] = r_vol
            else:
                flow, corr = self._execute(t, price, eta, forced=True)
                reward += flow
                info["correction"] = corr.delta_v
            self.done = True
        self.state.t = t + 1
        return StepResult(self.observe(), reward, done, info)


def episode_profit(records: Sequence[TradeRecord]) -> float:
    """Net cash of a finished episode, forced correction included."""
    if not any(r.t == T_LAST and not r.forced for r in records):
        raise IncompleteEpisode("trade log does not reach the last step")
    return sum(r.price * r.delta_v for r in records) - sum(r.fee for r in records)


def action_steps(records: Sequence[TradeRecord], tol: float = 1e-9) -> int:
    """Voluntary trades: steps with a volume change above ``tol``."""
    return sum(1 for r in records if not r.forced and abs(r.delta_v) > tol)


def export_trade_log(records: Sequence[TradeRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "price", "action", "delta_v", "fee", "reward"])
        for r in records:
            w.writerow([r.t, repr(r.price), repr(r.action), repr(r.delta_v), repr(r.fee), repr(r.reward)])


def hindsight_upper_bound(product: ProductSeries, fee: float = TRANSACTION_FEE, levels: int = 21) -> float:
    """Best evaluation-mode profit with full knowledge of the price path.

    Dynamic program over ``levels`` evenly spaced volumes in [0, 1]; the
    episode starts flat and ends with the forced correction to the final
    wind forecast.
    """
    grid = np.linspace(0.0, 1.0, levels)
    move = grid[None, :] - grid[:, None]  # move[j, k]: from level j to level k
    best = np.full(levels, -np.inf)
    best[0] = 0.0
    for p in product.prices:
        best = np.max(best[:, None] + p * move - fee * np.abs(move), axis=0)
    eta = product.forecast.wind[-1]
    p_last = product.prices[-1]
    gap = eta - grid
    return float(np.max(best + p_last * gap - fee * np.abs(gap)))
