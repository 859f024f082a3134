"""Evaluation harness and result tables.

Conventions:

* quantiles interpolate linearly between closest ranks (numpy's default);
* standard deviation is the sample standard deviation (``ddof=1``);
* "best performance" splits a product fractionally among agents whose profit
  is within 1e-9 EUR of the best;
* "steps" counts voluntary volume changes above 1e-9 MWh, excluding the
  forced terminal correction;
* improvement is ``(total - total_bl_wf) / |total_bl_wf| * 100``.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import EPISODE_LENGTH, TRANSACTION_FEE
from .agents import Agent
from .env import TradingEnv, action_steps, episode_profit
from .market_data import ProductSeries, TrainStats

REFERENCE_AGENT = "bl_wf"
TIE_TOL = 1e-9

ROW_LABELS = (
    "Mean",
    "Median",
    "Standard Deviation",
    "10% Quantile",
    "90% Quantile",
    "Total net profit",
    "% Improvement to BL_WF",
    "Best Performance in %",
    "Steps",
)


@dataclass
class AgentSummary:
    mean: float
    median: float
    std: float
    q10: float
    q90: float
    total: float
    improvement: float | None
    best_share: float
    steps: float

    def as_row(self) -> list:
        return [self.mean, self.median, self.std, self.q10, self.q90, self.total, self.improvement,
                self.best_share, self.steps]


@dataclass
class EvaluationReport:
    agents: list[str]
    products: list[str]
    profits: np.ndarray  # (n_agents, n_products)
    steps: np.ndarray  # (n_agents, n_products)
    summaries: dict[str, AgentSummary]

    def __eq__(self, other):
        if not isinstance(other, EvaluationReport):
            return NotImplemented
        return (
            self.agents == other.agents
            and self.products == other.products
            and np.array_equal(self.profits, other.profits)
            and np.array_equal(self.steps, other.steps)
            and self.summaries == other.summaries
        )


def best_shares(profits: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Percentage of products on which each agent is best, ties split fractionally."""
    profits = np.asarray(profits, dtype=np.float64)
    n_products = profits.shape[1]
    best = profits.max(axis=0)
    tied = profits >= best - tol
    credit = tied / tied.sum(axis=0)
    return 100.0 * credit.sum(axis=1) / n_products


def summarize(agents: Sequence[str], products: Sequence[str], profits, steps) -> EvaluationReport:
    agents = list(agents)
    profits = np.asarray(profits, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    if not agents:
        raise ValueError("at least one agent is required")
    if profits.shape != (len(agents), len(products)) or steps.shape != profits.shape:
        raise ValueError("profit/steps matrices must have shape (n_agents, n_products)")
    if len(products) == 0:
        raise ValueError("at least one product is required")
    totals = profits.sum(axis=1)
    ref = totals[agents.index(REFERENCE_AGENT)] if REFERENCE_AGENT in agents else None
    shares = best_shares(profits)
    out = {}
    for i, name in enumerate(agents):
        row = profits[i]
        q10, q90 = np.quantile(row, [0.1, 0.9])
        improvement = None
        if ref is not None and ref != 0:
            improvement = float((totals[i] - ref) / abs(ref) * 100.0)
        out[name] = AgentSummary(
            mean=float(row.mean()),
            median=float(np.median(row)),
            std=float(row.std(ddof=1)) if len(row) > 1 else 0.0,
            q10=float(q10),
            q90=float(q90),
            total=float(totals[i]),
            improvement=improvement,
            best_share=float(shares[i]),
            steps=float(steps[i].mean()),
        )
    return EvaluationReport(agents, list(products), profits, steps, out)


def product_seed(seed: int, product: ProductSeries) -> int:
    """Per-product seed, independent of the order products are evaluated in."""
    return int(np.random.SeedSequence([seed, zlib.crc32(product.name.encode())]).generate_state(1)[0])


def run_episode(agent: Agent, product: ProductSeries, stats: TrainStats, fee: float = TRANSACTION_FEE,
                strict: bool = False) -> TradingEnv:
    env = TradingEnv(stats, fee=fee, mode="evaluation", clamp=not strict)
    agent.reset()
    obs = env.reset(product)
    for _ in range(EPISODE_LENGTH):
        obs = env.step(agent.act(obs, env.view())).observation
    return env


def evaluate(
    agents: Mapping[str, Agent],
    products: Sequence[ProductSeries],
    stats: TrainStats,
    seed: int = 0,
    fee: float = TRANSACTION_FEE,
    strict: bool = False,
) -> EvaluationReport:
    """Run every agent on every product sequentially in evaluation mode.

    Agents exposing ``reseed`` are reseeded per product from ``seed``.
    ``strict`` disables action clamping so out-of-range actions raise.
    """
    if not agents:
        raise ValueError("at least one agent is required")
    names = list(agents)
    profits = np.empty((len(names), len(products)))
    steps = np.empty_like(profits)
    for j, product in enumerate(products):
        for i, name in enumerate(names):
            agent = agents[name]
            if hasattr(agent, "reseed"):
                agent.reseed(product_seed(seed, product))
            env = run_episode(agent, product, stats, fee, strict)
            profits[i, j] = episode_profit(env.records)
            steps[i, j] = action_steps(env.records)
    return summarize(names, [p.name for p in products], profits, steps)


# --- output -------------------------------------------------------------------


def _fmt(label: str, value) -> str:
    if value is None:
        return "n/a"
    if label in ("% Improvement to BL_WF", "Best Performance in %"):
        return f"{value:.2f}%"
    return f"{value:.2f}"


def format_table(report: EvaluationReport) -> str:
    """Plain-text table with one row per metric and one column per agent."""
    header = [""] + report.agents
    body = []
    for k, label in enumerate(ROW_LABELS):
        body.append([label] + [_fmt(label, report.summaries[a].as_row()[k]) for a in report.agents])
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return " | ".join([first] + rest).rstrip()

    rule = "-+-".join("-" * w for w in widths)
    out = [line(header), rule]
    for k, row in enumerate(body):
        if k in (5, 7):
            out.append(rule)
        out.append(line(row))
    return "\n".join(out) + "\n"


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "agents": report.agents,
        "products": report.products,
        "profits": report.profits.tolist(),
        "steps": report.steps.tolist(),
        "summaries": {a: vars(s) for a, s in report.summaries.items()},
    }


def report_from_dict(d: dict) -> EvaluationReport:
    summaries = {a: AgentSummary(**s) for a, s in d["summaries"].items()}
    return EvaluationReport(
        list(d["agents"]), list(d["products"]),
        np.array(d["profits"], dtype=np.float64).reshape(len(d["agents"]), len(d["products"])),
        np.array(d["steps"], dtype=np.float64).reshape(len(d["agents"]), len(d["products"])),
        summaries,
    )


def parse_summary(path: str | Path) -> EvaluationReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def emit_report(report: EvaluationReport, out_dir: str | Path, formats=("text", "csv", "json")) -> list[Path]:
    """Write ``table.txt``, ``profits.csv`` (one row per product) and ``summary.json``."""
    if not report.agents:
        raise ValueError("cannot emit a report without agents")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "text" in formats:
        p = out / "table.txt"
        p.write_text(format_table(report))
        written.append(p)
    if "csv" in formats:
        p = out / "profits.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["product"] + report.agents)
            for j, name in enumerate(report.products):
                w.writerow([name] + [repr(float(x)) for x in report.profits[:, j]])
        written.append(p)
    if "json" in formats:
        p = out / "summary.json"
        p.write_text(json.dumps(report_to_dict(report), indent=2))
        written.append(p)
    return written
