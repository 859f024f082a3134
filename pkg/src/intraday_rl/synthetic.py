"""Synthetic product series and forecast tracks.

Prices follow ``base + wave(t) + X_t`` where ``X`` is an exactly discretized
Ornstein-Uhlenbeck process (started from its stationary law) with Gaussian
jumps, and ``wave`` is an optional triangle wave with a random phase per
product. All randomness comes from numpy's PCG64 generator seeded through
``SeedSequence.spawn``, so every product has its own derived stream and the
output is reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timedelta, timezone

import numpy as np

from . import EPISODE_LENGTH
from .market_data import ForecastTrack, ProductSeries, parse_utc

PRICE_UPDATE_EVERY = 5
WIND_UPDATE_EVERY = 15


@dataclass
class SyntheticConfig:
    n_products: int = 240
    base_price: float = 50.0
    mean_reversion: float = 0.05
    volatility: float = 1.0
    jump_prob: float = 0.0
    jump_scale: float = 0.0
    forecast_noise_std: float = 0.0
    wind_start: float = 0.5
    wind_step_std: float = 0.05
    wave_amplitude: float = 0.0
    wave_period: float = 60.0
    seed: int = 0
    start: str = "2018-05-01T00:00:00+00:00"

    def __post_init__(self):
        if not 0.0 <= self.jump_prob <= 1.0:
            raise ValueError("jump_prob must lie in [0, 1]")
        for name in ("mean_reversion", "volatility", "jump_scale", "forecast_noise_std", "wind_step_std",
                     "wave_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.wave_period <= 0:
            raise ValueError("wave_period must be positive")
        self.wind_start = min(max(self.wind_start, 0.0), 1.0)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def ou_stationary_std(cfg: SyntheticConfig) -> float:
    """Stationary standard deviation of the noise component (inf for a random walk)."""
    if cfg.volatility == 0:
        return 0.0
    if cfg.mean_reversion == 0:
        return math.inf
    return cfg.volatility / math.sqrt(2.0 * cfg.mean_reversion)


def triangle_wave(t: np.ndarray, period: float, phase: float) -> np.ndarray:
    x = t / period + phase
    return 4.0 * np.abs(x - np.floor(x + 0.5)) - 1.0


def generate_price_path(
    cfg: SyntheticConfig, rng: np.random.Generator, product_id: datetime | None = None
) -> ProductSeries:
    n = EPISODE_LENGTH
    kappa, sigma = cfg.mean_reversion, cfg.volatility
    if kappa > 0:
        phi = math.exp(-kappa)
        step_std = sigma * math.sqrt((1.0 - phi * phi) / (2.0 * kappa))
        x0_std = ou_stationary_std(cfg)
    else:
        phi, step_std, x0_std = 1.0, sigma, 0.0

    x = np.empty(n)
    x[0] = rng.normal(0.0, x0_std) if x0_std > 0 else 0.0
    shocks = rng.normal(0.0, 1.0, size=n - 1) * step_std
    jumps = np.zeros(n - 1)
    if cfg.jump_prob > 0 and cfg.jump_scale > 0:
        hit = rng.random(n - 1) < cfg.jump_prob
        jumps[hit] = rng.normal(0.0, cfg.jump_scale, size=int(hit.sum()))
    for t in range(1, n):
        x[t] = phi * x[t - 1] + shocks[t - 1] + jumps[t - 1]

    prices = cfg.base_price + x
    if cfg.wave_amplitude > 0:
        phase = rng.random()
        prices = prices + cfg.wave_amplitude * triangle_wave(np.arange(n, dtype=np.float64), cfg.wave_period, phase)
    if product_id is None:
        product_id = parse_utc(cfg.start)
    return ProductSeries(product_id, prices, np.zeros(n, dtype=bool), cfg.base_price)


def forward_mean_forecast(prices: np.ndarray) -> np.ndarray:
    """Noise-free 5-minute forecast: mean of the next five prices, refreshed every 5 minutes.

    Near the end of the window the mean runs over the prices that remain; at
    the last minute it falls back to the current price.
    """
    n = len(prices)
    out = np.empty(n)
    for k in range(0, n, PRICE_UPDATE_EVERY):
        ahead = prices[k + 1 : k + 1 + PRICE_UPDATE_EVERY]
        out[k : k + PRICE_UPDATE_EVERY] = ahead.mean() if len(ahead) else prices[k]
    return out


def generate_forecasts(path: ProductSeries, cfg: SyntheticConfig, rng: np.random.Generator) -> ForecastTrack:
    n = len(path.prices)
    price_5min = forward_mean_forecast(path.prices)
    if cfg.forecast_noise_std > 0:
        n_blocks = -(-n // PRICE_UPDATE_EVERY)
        noise = rng.normal(0.0, cfg.forecast_noise_std, size=n_blocks)
        price_5min = price_5min + np.repeat(noise, PRICE_UPDATE_EVERY)[:n]

    n_blocks = -(-n // WIND_UPDATE_EVERY)
    levels = np.empty(n_blocks)
    levels[0] = cfg.wind_start
    steps = rng.normal(0.0, cfg.wind_step_std, size=n_blocks - 1) if cfg.wind_step_std > 0 else np.zeros(n_blocks - 1)
    for b in range(1, n_blocks):
        levels[b] = min(max(levels[b - 1] + steps[b - 1], 0.0), 1.0)
    wind = np.repeat(levels, WIND_UPDATE_EVERY)[:n]
    return ForecastTrack(wind=wind, price_5min=price_5min)


def generate_products(cfg: SyntheticConfig) -> list[ProductSeries]:
    """Hourly products with attached forecasts, one derived RNG stream each."""
    start = parse_utc(cfg.start)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.n_products)
    products = []
    for i, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        p = generate_price_path(cfg, rng, start + timedelta(hours=i))
        p.forecast = generate_forecasts(p, cfg, rng)
        products.append(p)
    return products


def attach_forecasts(products: list[ProductSeries], cfg: SyntheticConfig) -> None:
    """Give products without forecasts a synthetic forecast track (in place)."""
    children = np.random.SeedSequence(cfg.seed).spawn(len(products))
    for p, child in zip(products, children):
        if p.forecast is None:
            p.forecast = generate_forecasts(p, cfg, np.random.Generator(np.random.PCG64(child)))


def utc(year, month, day, hour=0, minute=0) -> datetime:
    return datetime(year, month, day, hour, minute, tzinfo=timezone.utc)
