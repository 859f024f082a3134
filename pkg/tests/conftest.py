from datetime import datetime, timezone

import numpy as np
import pytest

from intraday_rl import EPISODE_LENGTH
from intraday_rl.market_data import ForecastTrack, ProductSeries, TrainStats
from intraday_rl.synthetic import SyntheticConfig, generate_products

DELIVERY = datetime(2018, 9, 18, 23, 0, tzinfo=timezone.utc)


def make_product(prices, wind=0.5, forecast=None, day_ahead=50.0, product_id=DELIVERY):
    prices = np.broadcast_to(np.asarray(prices, dtype=np.float64), (EPISODE_LENGTH,)).copy()
    wind = np.broadcast_to(np.asarray(wind, dtype=np.float64), (EPISODE_LENGTH,)).copy()
    forecast = prices.copy() if forecast is None else np.broadcast_to(forecast, (EPISODE_LENGTH,)).copy()
    return ProductSeries(product_id, prices, np.zeros(EPISODE_LENGTH, bool), day_ahead,
                         ForecastTrack(wind, forecast))


@pytest.fixture
def stats():
    return TrainStats(price_mean=50.0, price_std=10.0, wind_std=0.1, n_products=1)


@pytest.fixture(scope="session")
def synthetic_products():
    cfg = SyntheticConfig(n_products=30, volatility=2.0, mean_reversion=0.05, jump_prob=0.01, jump_scale=5.0,
                          wind_step_std=0.1, forecast_noise_std=1.0, seed=7)
    return generate_products(cfg)


# one pass/fail line per acceptance criterion

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and (report.when == "call" or report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or name not in _acceptance:
            _acceptance[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{_acceptance[name].upper():7s} {name}")
