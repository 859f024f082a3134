"""Synchronous population-based training.

Members train for ``eval_interval`` iterations, are scored, and then the
bottom quantile copies the state of a uniformly chosen top-quantile member
(exploit) and perturbs the copied hyperparameters (explore). The training
task is abstracted as four callables so the scheduler can drive PPO as well
as cheap surrogate objectives:

* ``init(hp, member_id) -> state``
* ``train(state, hp, n_iterations) -> state``
* ``evaluate(state) -> float`` (higher is better)
* ``copy(state, member_id, round) -> state``
"""

from __future__ import annotations

import csv
import copy as _copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

PERTURB_FACTORS = (0.8, 1.2)
RESAMPLE_PROB = 0.25
QUANTILE = 0.25


@dataclass(frozen=True)
class ParamSpec:
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def clamp(self, x):
        x = min(max(x, self.low), self.high)
        return int(round(x)) if self.integer else float(x)

    def sample(self, rng: np.random.Generator):
        if self.integer:
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def perturb(self, x, rng: np.random.Generator):
        if self.integer:
            return self.clamp(x + (1 if rng.random() < 0.5 else -1))
        return self.clamp(x * PERTURB_FACTORS[int(rng.integers(2))])


def default_search_space() -> dict[str, ParamSpec]:
    """The six PPO hyperparameters tuned by PBT."""
    return {
        "clip": ParamSpec(0.1, 0.5),
        "entropy_coef": ParamSpec(1e-4, 1e-2, log=True),
        "gamma": ParamSpec(0.0, 1.0),
        "lr": ParamSpec(1e-5, 1e-3, log=True),
        "sgd_epochs": ParamSpec(1, 10, integer=True),
        "vf_loss_coef": ParamSpec(0.5, 1.0),
    }


def sample_hyperparams(space: dict[str, ParamSpec], rng: np.random.Generator) -> dict:
    return {k: spec.sample(rng) for k, spec in space.items()}


def explore(hp: dict, space: dict[str, ParamSpec], rng: np.random.Generator,
            resample_prob: float = RESAMPLE_PROB) -> dict:
    out = dict(hp)
    for k, spec in space.items():
        if rng.random() < resample_prob:
            out[k] = spec.sample(rng)
        else:
            out[k] = spec.perturb(hp[k], rng)
    return out


@dataclass
class PbtMember:
    member_id: int
    hyperparams: dict
    state: Any = None
    score: float | None = None
    iterations: int = 0


@dataclass
class PbtEvent:
    round: int
    kind: str  # "eval" or "exploit"
    member: int
    iterations: int
    score: float
    donor: int | None = None
    donor_score: float | None = None
    hyperparams: dict = field(default_factory=dict)


@dataclass
class PbtResult:
    best: PbtMember
    members: list[PbtMember]
    history: list[PbtEvent]

    def best_scores(self) -> list[float]:
        """Best member score at each evaluation round."""
        by_round: dict[int, float] = {}
        for e in self.history:
            if e.kind == "eval":
                by_round[e.round] = max(by_round.get(e.round, -math.inf), e.score)
        return [by_round[r] for r in sorted(by_round)]


def _default_copy(state, member_id, round_):
    return _copy.deepcopy(state)


def _truncation(members: Sequence[PbtMember], quantile: float):
    n = len(members)
    k = max(1, int(math.floor(n * quantile)))
    k = min(k, n // 2)
    # stable ranking: ties broken by member id
    ranked = sorted(members, key=lambda m: (m.score, -m.member_id))
    return ranked[:k], ranked[n - k :]


def pbt_run(
    population_size: int,
    eval_interval: int,
    budget: int,
    search_space: dict[str, ParamSpec],
    init: Callable,
    train: Callable,
    evaluate: Callable,
    copy: Callable = _default_copy,
    seed: int = 0,
    quantile: float = QUANTILE,
    initial_hyperparams: Sequence[dict] | None = None,
) -> PbtResult:
    """Run PBT for ``budget`` training iterations per member."""
    if population_size < 2:
        raise ValueError("population_size must be at least 2")
    if eval_interval < 1 or budget < 1:
        raise ValueError("eval_interval and budget must be positive")
    rng = np.random.default_rng(seed)
    if initial_hyperparams is None:
        initial_hyperparams = [sample_hyperparams(search_space, rng) for _ in range(population_size)]
    members = [PbtMember(i, dict(hp)) for i, hp in enumerate(initial_hyperparams)]
    for m in members:
        m.state = init(m.hyperparams, m.member_id)
    history: list[PbtEvent] = []

    rnd = 0
    done = 0
    while done < budget:
        n = min(eval_interval, budget - done)
        for m in members:
            m.state = train(m.state, m.hyperparams, n)
            m.iterations += n
            m.score = float(evaluate(m.state))
            history.append(PbtEvent(rnd, "eval", m.member_id, m.iterations, m.score,
                                    hyperparams=dict(m.hyperparams)))
        done += n
        if done >= budget:
            break
        bottom, top = _truncation(members, quantile)
        for m in bottom:
            donor = top[int(rng.integers(len(top)))]
            m.state = copy(donor.state, m.member_id, rnd)
            m.hyperparams = explore(donor.hyperparams, search_space, rng)
            m.iterations = donor.iterations
            history.append(PbtEvent(rnd, "exploit", m.member_id, m.iterations, m.score, donor.member_id,
                                    donor.score, dict(m.hyperparams)))
            m.score = donor.score
        rnd += 1

    best = max(members, key=lambda m: (m.score, -m.member_id))
    return PbtResult(best, members, history)


def random_search(
    population_size: int,
    budget: int,
    search_space: dict[str, ParamSpec],
    init: Callable,
    train: Callable,
    evaluate: Callable,
    seed: int = 0,
    initial_hyperparams: Sequence[dict] | None = None,
) -> PbtResult:
    """Independent members trained for the full budget; the baseline PBT is compared against."""
    rng = np.random.default_rng(seed)
    if initial_hyperparams is None:
        initial_hyperparams = [sample_hyperparams(search_space, rng) for _ in range(population_size)]
    members, history = [], []
    for i, hp in enumerate(initial_hyperparams):
        m = PbtMember(i, dict(hp))
        m.state = train(init(m.hyperparams, i), m.hyperparams, budget)
        m.iterations = budget
        m.score = float(evaluate(m.state))
        history.append(PbtEvent(0, "eval", i, budget, m.score, hyperparams=dict(hp)))
        members.append(m)
    best = max(members, key=lambda m: (m.score, -m.member_id))
    return PbtResult(best, members, history)


class QuadraticTask:
    """1-D surrogate: gradient descent on ``(theta - target)^2`` with a tunable step size.

    Score is ``-(theta - target)^2``. The step-size range is too small to
    converge within a few dozen iterations, so schedules matter.
    """

    space = {"lr": ParamSpec(1e-4, 0.05, log=True)}

    def __init__(self, target: float = 1.0, start: float = 0.0):
        self.target = target
        self.start = start

    def init(self, hp, member_id):
        return self.start

    def train(self, theta, hp, n):
        for _ in range(n):
            theta = theta - hp["lr"] * 2.0 * (theta - self.target)
        return theta

    def evaluate(self, theta):
        return -((theta - self.target) ** 2)


def write_history(history: Sequence[PbtEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "kind", "member", "iterations", "score", "donor", "donor_score", "hyperparams"])
        for e in history:
            w.writerow([e.round, e.kind, e.member, e.iterations, repr(e.score),
                        "" if e.donor is None else e.donor,
                        "" if e.donor_score is None else repr(e.donor_score),
                        json.dumps(e.hyperparams, sort_keys=True)])
