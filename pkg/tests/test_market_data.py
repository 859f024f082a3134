import math
import random
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intraday_rl import EPISODE_LENGTH
from intraday_rl.errors import EmptyInput, InsufficientData, NoSeedPrice
from intraday_rl.market_data import (
    Tick, aggregate_all, aggregate_vwap, filter_outlier_products, load_dataset, parse_utc, read_day_ahead_csv,
    read_ticks_csv, save_dataset, split_train_test, window_minutes, window_start, write_ticks_csv,
)

from conftest import make_product

PRODUCT = datetime(2018, 6, 1, 12, tzinfo=timezone.utc)
START = window_start(PRODUCT)


def tick(minute, price, volume=1.0, second=0.0):
    return Tick(START + timedelta(minutes=minute, seconds=second), PRODUCT, price, volume)


def test_window_covers_four_hours_to_thirty_minutes():
    mins = window_minutes(PRODUCT)
    assert len(mins) == EPISODE_LENGTH == 211
    assert mins[0] == PRODUCT - timedelta(hours=4)
    assert mins[-1] == PRODUCT - timedelta(minutes=30)


def test_vwap_of_two_ticks():
    s = aggregate_vwap([tick(0, 50, 2), tick(0, 60, 1, second=30)], PRODUCT)
    assert s.prices[0] == pytest.approx(160 / 3, rel=1e-15)
    assert round(s.prices[0], 4) == 53.3333


def test_single_tick_and_forward_fill():
    s = aggregate_vwap([tick(0, 42, 0.5)], PRODUCT)
    assert s.prices[0] == 42
    assert s.prices[1] == 42 and s.filled_mask[1]
    assert not s.filled_mask[0]
    assert np.all(s.prices == 42)


def test_bucket_is_left_closed():
    s = aggregate_vwap([tick(0, 10), tick(1, 20, second=0.0), tick(1, 30, second=59.999)], PRODUCT)
    assert s.prices[0] == 10
    assert s.prices[1] == 25


def test_seed_from_before_window():
    ticks = [tick(-30, 11), tick(-2, 40, 1), tick(-2, 50, 3), tick(5, 70)]
    s = aggregate_vwap(ticks, PRODUCT)
    assert s.prices[0] == pytest.approx(47.5)
    assert s.filled_mask[:5].all()
    assert s.prices[5] == 70


def test_ticks_after_window_ignored():
    s = aggregate_vwap([tick(0, 10), tick(211, 999), tick(220, 999)], PRODUCT)
    assert np.all(s.prices == 10)


def test_no_seed_raises():
    with pytest.raises(NoSeedPrice):
        aggregate_vwap([tick(3, 10)], PRODUCT)
    with pytest.raises(EmptyInput):
        aggregate_vwap([], PRODUCT)


def test_day_ahead_defaults_to_first_price():
    assert aggregate_vwap([tick(0, 33)], PRODUCT).day_ahead_price == 33
    assert aggregate_vwap([tick(0, 33)], PRODUCT, 41.0).day_ahead_price == 41.0


def test_tick_invariants():
    with pytest.raises(ValueError):
        Tick(START, PRODUCT, 10.0, 0.0)
    with pytest.raises(ValueError):
        Tick(PRODUCT, PRODUCT, 10.0, 1.0)


def brute_force_vwap(ticks):
    """Grouped weighted mean per minute plus forward fill, in plain Python."""
    groups = {}
    for t in ticks:
        m = math.floor((t.timestamp - START).total_seconds() / 60)
        groups.setdefault(m, []).append(t)
    pre = [m for m in groups if m < 0]
    prev = None
    if pre:
        g = groups[max(pre)]
        prev = sum(t.price * t.volume for t in g) / sum(t.volume for t in g)
    out = []
    for m in range(EPISODE_LENGTH):
        if m in groups:
            g = groups[m]
            prev = sum(t.price * t.volume for t in g) / sum(t.volume for t in g)
        out.append(prev)
    return out


tick_sets = st.lists(
    st.tuples(
        st.floats(-240 * 60, 215 * 60),  # seconds relative to window start
        st.floats(-100, 300),
        st.floats(0.01, 50),
    ),
    min_size=1,
    max_size=80,
)


@settings(max_examples=150, deadline=None)
@given(tick_sets)
def test_vwap_matches_grouped_mean_oracle(raw):
    ticks = [Tick(START + timedelta(seconds=s), PRODUCT, p, v) for s, p, v in raw]
    expected = brute_force_vwap(ticks)
    if expected[0] is None:
        with pytest.raises(NoSeedPrice):
            aggregate_vwap(ticks, PRODUCT)
        return
    got = aggregate_vwap(ticks, PRODUCT).prices
    assert len(got) == EPISODE_LENGTH
    for g, e in zip(got, expected):
        assert abs(g - e) <= 1e-12 * max(abs(e), 1.0)


@settings(max_examples=50, deadline=None)
@given(tick_sets, st.randoms(use_true_random=False))
def test_input_order_does_not_matter(raw, rnd):
    ticks = [Tick(START + timedelta(seconds=s), PRODUCT, p, v) for s, p, v in raw]
    shuffled = list(ticks)
    rnd.shuffle(shuffled)
    try:
        a = aggregate_vwap(ticks, PRODUCT)
    except NoSeedPrice:
        return
    b = aggregate_vwap(shuffled, PRODUCT)
    np.testing.assert_allclose(a.prices, b.prices, rtol=1e-12)
    assert np.array_equal(a.filled_mask, b.filled_mask)


def test_filter_examples():
    spike = make_product(np.r_[np.full(100, 60.0), 176.61, np.full(110, 60.0)])
    calm = make_product(np.linspace(0, 100, EPISODE_LENGTH))
    low = make_product(np.full(EPISODE_LENGTH, -50.0))
    assert filter_outlier_products([spike, calm, low], 150, -50) == [calm, low]


def test_filter_requires_ordered_bounds():
    with pytest.raises(ValueError):
        filter_outlier_products([], -50, 150)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(0, 120)), min_size=0, max_size=20))
def test_filter_idempotent(params):
    products = [make_product(lo + np.linspace(0, span, EPISODE_LENGTH)) for lo, span in params]
    once = filter_outlier_products(products)
    assert filter_outlier_products(once) == once


def hourly(n, start=datetime(2018, 5, 1, tzinfo=timezone.utc), spikes=()):
    out = []
    for i in range(n):
        prices = np.full(EPISODE_LENGTH, 40.0 + i % 7)
        if i in spikes:
            prices[50] = 500.0
        out.append(make_product(prices, product_id=start + timedelta(hours=i)))
    return out


def test_split_fraction_is_chronological_tail():
    products = hourly(100)
    split = split_train_test(list(reversed(products)), test_fraction=0.1)
    assert [p.product_id for p in split.test] == [p.product_id for p in products[90:]]
    assert max(p.product_id for p in split.train) < min(p.product_id for p in split.test)


def test_split_stats_from_train_only():
    products = hourly(20)
    for p in products[18:]:
        p.prices[:] = 1000.0
    split = split_train_test(products, test_fraction=0.1, upper=2000)
    train_prices = np.concatenate([p.prices for p in products[:18]])
    assert split.train_stats.price_mean == pytest.approx(train_prices.mean())
    assert split.train_stats.price_std == pytest.approx(train_prices.std())


def test_split_by_date():
    products = hourly(24 * 30, start=datetime(2018, 9, 1, tzinfo=timezone.utc))
    split = split_train_test(products, test_after=datetime(2018, 9, 15, tzinfo=timezone.utc))
    assert all(p.product_id >= datetime(2018, 9, 15, tzinfo=timezone.utc) for p in split.test)
    assert len(split.test) == 24 * 16
    assert {p.product_id for p in split.train}.isdisjoint({p.product_id for p in split.test})


def test_outliers_filtered_from_train_only():
    products = hourly(50, spikes={3, 7, 48})
    split = split_train_test(products, test_fraction=0.1)
    assert split.removed_outliers == 2
    assert any(p.prices.max() > 150 for p in split.test)
    assert all(p.prices.max() <= 150 for p in split.train)


def test_split_insufficient():
    with pytest.raises(InsufficientData):
        split_train_test(hourly(3), test_fraction=0.0)
    with pytest.raises(InsufficientData):
        split_train_test(hourly(3), test_after=datetime(2017, 1, 1, tzinfo=timezone.utc))


def test_csv_roundtrip_and_ingest(tmp_path):
    rng = random.Random(3)
    products = [PRODUCT, PRODUCT + timedelta(hours=1)]
    ticks = []
    for prod in products:
        ws = window_start(prod)
        for _ in range(200):
            ticks.append(Tick(ws + timedelta(seconds=rng.uniform(-600, 211 * 60)), prod, rng.uniform(20, 80),
                              rng.uniform(0.1, 5)))
    path = tmp_path / "ticks.csv"
    write_ticks_csv(ticks, path)
    back = read_ticks_csv(path)
    assert back == ticks
    (tmp_path / "da.csv").write_text(f"product,price\n{PRODUCT.isoformat()},45.5\n")
    da = read_day_ahead_csv(tmp_path / "da.csv")
    series = aggregate_all(back, da)
    assert [s.product_id for s in series] == products
    assert series[0].day_ahead_price == 45.5
    assert series[1].day_ahead_price == series[1].prices[0]


def test_parse_utc_variants():
    assert parse_utc("2018-09-15T00:00:00Z") == datetime(2018, 9, 15, tzinfo=timezone.utc)
    assert parse_utc("2018-09-15 02:00:00+02:00") == datetime(2018, 9, 15, tzinfo=timezone.utc)
    assert parse_utc("2018-09-15") == datetime(2018, 9, 15, tzinfo=timezone.utc)


def test_dataset_roundtrip(tmp_path, synthetic_products):
    split = split_train_test(synthetic_products, 0.2)
    save_dataset(split, tmp_path)
    back = load_dataset(tmp_path)
    assert [p.name for p in back.train] == [p.name for p in split.train]
    assert back.train_stats == split.train_stats
    for a, b in zip(back.test, split.test):
        assert np.array_equal(a.prices, b.prices)
        assert np.array_equal(a.forecast.wind, b.forecast.wind)
        assert a.product_id == b.product_id
