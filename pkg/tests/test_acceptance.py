"""Acceptance criteria, one test each. ``pytest`` prints a pass/fail summary line per criterion."""

import math
import statistics
import time
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from intraday_rl import EPISODE_LENGTH
from intraday_rl.agents import FirstForecastAgent, PriceForecastAgent, RandomAgent, WindFollowAgent
from intraday_rl.env import TradingEnv, action_steps, trade_reward, volume_reward
from intraday_rl.experiments import pbt_vs_random_search, run_learning_experiment
from intraday_rl.market_data import (
    Tick, TrainStats, aggregate_vwap, filter_outlier_products, window_start,
)
from intraday_rl.metrics import evaluate, format_table, product_seed, summarize
from intraday_rl.nn import ActorCritic
from intraday_rl.ppo import (
    HyperParams, PolicyAgent, RolloutBatch, clipped_surrogate, compute_advantages, gaussian_logp,
    ppo_loss_and_grads,
)

from conftest import make_product

STATS = TrainStats(50.0, 10.0, 0.1, 1)


def random_product(rng, product_id=None, noise=1.0):
    prices = 50 + np.cumsum(rng.normal(0, 2, EPISODE_LENGTH))
    forecast = prices + rng.normal(0, noise, EPISODE_LENGTH)
    wind = np.repeat(np.clip(0.5 + np.cumsum(rng.normal(0, 0.1, 15)), 0, 1), 15)[:EPISODE_LENGTH]
    kw = {} if product_id is None else {"product_id": product_id}
    return make_product(prices, wind=wind, forecast=forecast, **kw)


def test_criterion_01_reward_identities():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(1000):
        p = rng.uniform(-100, 300)
        a_prev, a_t, eta = rng.uniform(0, 1, 3)
        expected_trade = p * a_t - p * a_prev - 0.2 * abs(a_t - a_prev)
        expected_vol = -0.1 * (eta - a_t) ** 2
        assert abs(trade_reward(p, a_prev, a_t) - expected_trade) <= 1e-12 * max(1.0, abs(p))
        assert abs(volume_reward(eta, a_t) - expected_vol) <= 1e-12
    assert time.perf_counter() - start < 1.0


def test_criterion_02_accounting():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    for k in range(100):
        product = random_product(rng)
        actions = rng.uniform(-0.3, 1.3, EPISODE_LENGTH)
        env = TradingEnv(STATS, mode="evaluation")
        env.reset(product)
        for a in actions:
            env.step(a)
        # replay from the log and, independently, from the raw actions
        from_log = 0.0
        for r in env.records:
            from_log += r.price * r.delta_v - 0.2 * abs(r.delta_v)
        from_actions, held = 0.0, 0.0
        targets = list(np.clip(actions, 0, 1)) + [product.forecast.wind[-1]]
        prices = list(product.prices) + [product.prices[-1]]
        for p, a in zip(prices, targets):
            dv = a - held
            from_actions += p * dv - 0.2 * abs(dv)
            held = a
        assert env.state.cash == from_log == from_actions
        assert env.state.a_prev == product.forecast.wind[-1]

    agents = [FirstForecastAgent(), WindFollowAgent(), PriceForecastAgent(), RandomAgent(0.2, seed=3),
              PolicyAgent(ActorCritic(seed=1, head_gain=1.0))]
    for product in [random_product(rng) for _ in range(5)]:
        for agent in agents:
            env = TradingEnv(STATS, mode="evaluation")
            agent.reset()
            obs = env.reset(product)
            for _ in range(EPISODE_LENGTH):
                obs = env.step(agent.act(obs, env.view())).observation
            assert env.state.a_prev == product.forecast.wind[-1]
    assert time.perf_counter() - start < 5.0


def fd_grad(net, loss, h=1e-5):
    base = net.get_flat()
    out = np.empty_like(base)
    for i in range(len(base)):
        x = base.copy()
        x[i] += h
        net.set_flat(x)
        up = loss()
        x[i] -= 2 * h
        net.set_flat(x)
        out[i] = (up - loss()) / (2 * h)
    net.set_flat(base)
    return out


def test_criterion_03_gradient_checks():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        hidden = tuple(int(h) for h in rng.integers(3, 8, size=rng.integers(1, 4)))
        net = ActorCritic(n_inputs=12, hidden=hidden, seed=seed, log_std_init=rng.uniform(-1, 0), head_gain=1.0)
        n = 24
        obs = rng.normal(size=(n, 12))
        mean, log_std, values = net.forward(obs)
        # behaviour policy differs from the current one so some ratios are clipped
        old_mean = mean + rng.normal(0, 0.3, n)
        old_log_std = log_std + rng.normal(0, 0.2)
        actions = old_mean + np.exp(old_log_std) * rng.normal(size=n)
        batch = RolloutBatch(obs, actions, gaussian_logp(actions, old_mean, old_log_std), old_mean, old_log_std,
                             np.zeros(n), values + rng.normal(0, 1, n), np.zeros(n, bool),
                             advantages=rng.normal(size=n), returns=rng.normal(size=n))
        hp = HyperParams(clip=rng.uniform(0.1, 0.5), entropy_coef=rng.uniform(0, 0.01), kl_coef=rng.uniform(0, 1),
                         vf_clip=rng.uniform(0.2, 2.0), vf_loss_coef=rng.uniform(0.5, 1.0),
                         train_batch=211, minibatch=211)
        _, grads, _ = ppo_loss_and_grads(net, batch, hp)
        analytic = np.concatenate([grads[k].ravel() for k in net.keys()])
        numeric = fd_grad(net, lambda: ppo_loss_and_grads(net, batch, hp)[0])
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        worst = max(worst, rel)
    assert worst <= 1e-4, f"worst relative error {worst:.2e}"
    assert time.perf_counter() - start < 30.0


def test_criterion_04_gamma_zero_reduction():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 800))
        r, v = rng.normal(0, 10, size=(2, n))
        dones = rng.random(n) < 0.05
        dones[-1] = True
        adv, ret = compute_advantages(r, v, dones, gamma=0.0, lam=float(rng.uniform(0, 1)))
        assert np.max(np.abs(adv - (r - v))) <= 1e-12
        assert np.max(np.abs(ret - r)) <= 1e-12


def test_criterion_05_clipping_cases():
    clip = 0.432
    for adv in (0.5, 1.0, 3.7):
        assert clipped_surrogate(1.5, adv, clip) == pytest.approx(1.432 * adv, rel=0, abs=1e-15)
        assert clipped_surrogate(1.0, adv, clip) == adv
        assert clipped_surrogate(1.0, -adv, clip) == -adv
        # negative advantage: the unclipped, more pessimistic term wins
        assert clipped_surrogate(1.5, -adv, clip) == -1.5 * adv


@pytest.mark.slow
def test_criterion_06_learning_experiment():
    start = time.perf_counter()
    lines = []
    for seed in range(3):
        res = run_learning_experiment(seed, iterations=200)
        lines.append(f"seed {seed}: agent {res.agent_mean:.2f}  bl_wf {res.wind_follow_mean:.2f}  "
                     f"bound {res.upper_bound_mean:.2f}  ({res.seconds:.0f}s)")
        print(lines[-1])
        assert res.iterations <= 200
        assert res.wind_follow_mean > 0
        assert res.agent_mean >= 1.25 * res.wind_follow_mean, lines[-1]
        assert res.agent_mean >= 0.70 * res.upper_bound_mean, lines[-1]
    assert time.perf_counter() - start < 600.0


def pf_oracle(prices, forecast):
    held, out = 0.0, []
    for t in range(EPISODE_LENGTH):
        s = max(t - 1, 0)
        if forecast[t] < prices[t] and forecast[s] < prices[s]:
            held = min(held + 0.1, 1.0)
        elif forecast[t] > prices[t] and forecast[s] > prices[s]:
            held = max(held - 0.1, 0.0)
        out.append(held)
    return out


def play(agent, product, stats=STATS):
    env = TradingEnv(stats, mode="evaluation")
    agent.reset()
    obs = env.reset(product)
    for _ in range(EPISODE_LENGTH):
        obs = env.step(agent.act(obs, env.view())).observation
    return env


def test_criterion_07_baseline_behavior():
    rng = np.random.default_rng(7)
    agent = RandomAgent(0.1, seed=7)
    trades = steps = 0
    flat = make_product(50.0, wind=0.5)
    while steps < 100_000:
        env = play(agent, flat)
        trades += action_steps(env.records)
        steps += EPISODE_LENGTH
    assert abs(trades / steps - 0.25) <= 0.01

    for _ in range(50):
        product = random_product(rng)
        wf = play(WindFollowAgent(), product)
        assert [r.action for r in wf.records if not r.forced] == list(product.forecast.wind)
        assert action_steps(play(FirstForecastAgent(), product).records) <= 1
        pf = play(PriceForecastAgent(), product)
        held = [r.action for r in pf.records if not r.forced]
        assert held == pytest.approx(pf_oracle(product.prices, product.forecast.price_5min), abs=1e-12)


def test_criterion_08_pbt_beats_random_search():
    wins = 0
    for seed in range(20):
        pbt, rs = pbt_vs_random_search(seed)
        wins += pbt.best.score >= rs.best.score
        rounds = {}
        for e in pbt.history:
            rounds.setdefault(e.round, []).append(e)
        for events in rounds.values():
            scores = {e.member: e.score for e in events if e.kind == "eval"}
            k = max(1, math.floor(len(scores) * 0.25))
            top = sorted(scores, key=lambda m: (scores[m], -m))[-k:]
            assert not any(e.kind == "exploit" and e.member in top for e in events)
    assert wins >= 16


def brute_force_quantile(xs, q):
    s = sorted(xs)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


GOLDEN_TABLE = """\
                       |  agent |  bl_wf |  bl_pf
-----------------------+--------+--------+-------
Mean                   |  11.40 |  10.95 |  10.50
Median                 |   7.75 |   7.75 |   6.00
Standard Deviation     |  17.15 |  14.39 |  19.09
10% Quantile           |  -1.95 |   0.40 |  -5.40
90% Quantile           |  29.00 |  25.30 |  30.60
-----------------------+--------+--------+-------
Total net profit       |  57.00 |  54.75 |  52.50
% Improvement to BL_WF |  4.11% |  0.00% | -4.11%
-----------------------+--------+--------+-------
Best Performance in %  | 10.00% | 50.00% | 40.00%
Steps                  |   3.00 | 209.80 |   1.00
"""


def test_criterion_09_metrics():
    rng = np.random.default_rng(9)
    products = [random_product(rng, DELIVERY + timedelta(hours=i)) for i in range(25)]
    agents = {"bl_wf": WindFollowAgent(), "bl_pf": PriceForecastAgent(), "bl_first": FirstForecastAgent(),
              "bl_random": RandomAgent(0.1)}
    report = evaluate(agents, products, STATS, seed=5)

    # independent recomputation from the trade logs of a second run
    logs = {}
    for name, agent in agents.items():
        for product in products:
            if hasattr(agent, "reseed"):
                agent.reseed(product_seed(5, product))
            logs[name, product.name] = play(agent, product).records
    profit = {k: sum(r.price * r.delta_v - r.fee for r in recs) for k, recs in logs.items()}
    steps = {k: sum(1 for r in recs if not r.forced and abs(r.delta_v) > 1e-9) for k, recs in logs.items()}
    names = [p.name for p in products]
    ref_total = sum(profit["bl_wf", n] for n in names)
    best = {n: max(profit[a, n] for a in agents) for n in names}
    for i, a in enumerate(agents):
        xs = [profit[a, n] for n in names]
        s = report.summaries[a]
        credit = sum(1 / sum(1 for b in agents if profit[b, n] >= best[n] - 1e-9)
                     for n in names if profit[a, n] >= best[n] - 1e-9)
        expected = {
            "mean": statistics.fmean(xs), "median": statistics.median(xs), "std": statistics.stdev(xs),
            "q10": brute_force_quantile(xs, 0.1), "q90": brute_force_quantile(xs, 0.9), "total": sum(xs),
            "improvement": (sum(xs) - ref_total) / abs(ref_total) * 100, "best_share": 100 * credit / len(names),
            "steps": statistics.fmean(steps[a, n] for n in names),
        }
        for key, val in expected.items():
            got = getattr(s, key)
            assert abs(got - val) <= 1e-12 * max(1.0, abs(val)), (a, key, got, val)
        np.testing.assert_allclose(report.profits[i], xs, rtol=0, atol=1e-12)

    profits = np.array([[12.5, -3.25, 40.0, 7.75, 0.0], [10.0, -1.0, 35.5, 7.75, 2.5], [15.0, -8.0, 41.0, 6.0, -1.5]])
    step_counts = np.array([[3, 5, 2, 4, 1], [211, 210, 209, 211, 208], [1, 1, 1, 1, 1]], dtype=float)
    fixed = summarize(["agent", "bl_wf", "bl_pf"], list("abcde"), profits, step_counts)
    assert format_table(fixed).encode() == GOLDEN_TABLE.encode()
    assert format_table(summarize(["agent", "bl_wf", "bl_pf"], list("abcde"), profits, step_counts)) == GOLDEN_TABLE


DELIVERY = datetime(2018, 7, 1, 10, tzinfo=timezone.utc)


def test_criterion_10_data_pipeline():
    rng = np.random.default_rng(10)
    for h in range(20):
        product = DELIVERY + timedelta(hours=h)
        ws = window_start(product)
        n = int(rng.integers(1, 400))
        secs = np.r_[rng.uniform(-300, 0), rng.uniform(-300, 211 * 60, n)]
        ticks = [Tick(ws + timedelta(seconds=float(s)), product, float(rng.uniform(-40, 140)),
                      float(rng.uniform(0.1, 10))) for s in secs]
        series = aggregate_vwap(ticks, product)
        assert len(series.prices) == len(series.filled_mask) == EPISODE_LENGTH == 211
        groups = {}
        for t in ticks:
            groups.setdefault(math.floor((t.timestamp - ws).total_seconds() / 60), []).append(t)
        for m in sorted(groups):
            if not 0 <= m < EPISODE_LENGTH:
                continue
            vwap = sum(t.price * t.volume for t in groups[m]) / sum(t.volume for t in groups[m])
            assert abs(series.prices[m] - vwap) <= 1e-12 * max(1.0, abs(vwap))
            assert not series.filled_mask[m]
        filled = [m for m in range(EPISODE_LENGTH) if m not in groups]
        assert all(series.filled_mask[m] for m in filled)
        assert all(series.prices[m] == series.prices[m - 1] for m in filled if m > 0)

    # 3288 products, 33 with a single minute outside [-50, 150]
    violators = set(rng.choice(3288, size=33, replace=False).tolist())
    products = []
    for i in range(3288):
        prices = rng.uniform(-49.9, 149.9, EPISODE_LENGTH)
        if i in violators:
            prices[rng.integers(EPISODE_LENGTH)] = rng.choice([rng.uniform(150.01, 300), rng.uniform(-200, -50.01)])
        products.append(make_product(prices, product_id=DELIVERY + timedelta(hours=i)))
    kept = filter_outlier_products(products)
    assert len(products) - len(kept) == 33
    assert {p.product_id for p in products} - {p.product_id for p in kept} == {
        DELIVERY + timedelta(hours=i) for i in violators}
