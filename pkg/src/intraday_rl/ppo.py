"""Proximal policy optimization on the trading environment.

The actors are run in lockstep inside one process: each iteration plays
``train_batch // 211`` complete training episodes side by side, one actor per
episode, on an immutable snapshot of the policy. The learner then runs
``sgd_epochs`` shuffled passes of minibatch Adam steps on the loss

    -clipped_surrogate + vf_loss_coef * clipped_value_loss
        + kl_coef * KL(old || new) - entropy_coef * entropy

whose gradients are derived by hand in :func:`ppo_loss_and_grads`.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import EPISODE_LENGTH, TRANSACTION_FEE
from .agents import Agent
from .env import TradingEnv, episode_profit
from .errors import NonFiniteLoss
from .market_data import ProductSeries, TrainStats
from .nn import ActorCritic, Adam

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
CURVE_COLUMNS = ["iter", "mean_profit", "policy_loss", "vf_loss", "kl", "entropy", "clip_frac"]


@dataclass
class HyperParams:
    clip: float = 0.432
    entropy_coef: float = 0.001433
    gamma: float = 0.0
    kl_coef: float = 0.5
    lr: float = 1e-4
    sgd_epochs: int = 7
    minibatch: int = 422
    train_batch: int = 2532
    vf_clip: float = 10.0
    vf_loss_coef: float = 0.984103
    gae_lambda: float = 1.0
    reward_scale: float = 1.0
    normalize_advantages: bool = True

    def __post_init__(self):
        if self.train_batch % EPISODE_LENGTH:
            raise ValueError(f"train_batch must be a multiple of the episode length {EPISODE_LENGTH}")
        if self.minibatch <= 0 or self.train_batch % self.minibatch:
            raise ValueError("minibatch must divide train_batch")
        if self.sgd_epochs < 1:
            raise ValueError("sgd_epochs must be at least 1")

    @property
    def n_actors(self) -> int:
        return self.train_batch // EPISODE_LENGTH

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_rewards: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)

    def subset(self, idx: np.ndarray) -> "RolloutBatch":
        return RolloutBatch(
            self.obs[idx], self.actions[idx], self.logp[idx], self.mean[idx], self.log_std[idx],
            self.rewards[idx], self.values[idx], self.dones[idx],
            None if self.advantages is None else self.advantages[idx],
            None if self.returns is None else self.returns[idx],
        )


def gaussian_logp(x, mean, log_std):
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def gaussian_entropy(log_std):
    return log_std + 0.5 * (1.0 + LOG_2PI)


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new):
    """KL(old || new) for univariate Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    return log_std_new - log_std_old + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5


def clipped_surrogate(ratio, advantage, clip):
    """Pessimistic elementwise min of the raw and ratio-clipped surrogate terms."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)


# --- rollouts -----------------------------------------------------------------


def collect_rollouts(
    net: ActorCritic,
    envs: Sequence[TradingEnv],
    products: Sequence[ProductSeries],
    rng: np.random.Generator,
) -> RolloutBatch:
    """Play one full episode per env on the given products with a sampled Gaussian policy.

    The log-probability is that of the unclamped sample; the env clamps.
    Output rows are grouped by episode, in env order.
    """
    n_env = len(envs)
    T = EPISODE_LENGTH
    n_in = net.sizes[0]
    obs = np.empty((n_env, T, n_in))
    act = np.empty((n_env, T))
    mean = np.empty((n_env, T))
    logstd = np.empty((n_env, T))
    val = np.empty((n_env, T))
    rew = np.empty((n_env, T))
    cur = np.stack([env.reset(p, mode="training") for env, p in zip(envs, products)])
    for t in range(T):
        mu, ls, v = net.forward(cur)
        a = mu + np.exp(ls) * rng.standard_normal(n_env)
        obs[:, t], act[:, t], mean[:, t], logstd[:, t], val[:, t] = cur, a, mu, ls, v
        nxt = []
        for i, env in enumerate(envs):
            res = env.step(a[i])
            rew[i, t] = res.reward
            nxt.append(res.observation)
        cur = np.stack(nxt)
    dones = np.zeros((n_env, T), dtype=bool)
    dones[:, -1] = True
    flat = lambda x: x.reshape(n_env * T, *x.shape[2:])
    return RolloutBatch(
        obs=flat(obs), actions=flat(act), logp=flat(gaussian_logp(act, mean, logstd)), mean=flat(mean),
        log_std=flat(logstd), rewards=flat(rew), values=flat(val), dones=flat(dones),
        episode_rewards=rew.sum(axis=1).tolist(),
    )


def compute_advantages(rewards, values, dones, gamma: float, lam: float):
    """Generalized advantage estimation; returns ``(advantages, returns)`` before normalization.

    ``dones[t]`` marks the last row of an episode; nothing is bootstrapped past it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.empty(n)
    running = 0.0
    next_value = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            running = 0.0
            next_value = 0.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


# --- loss ---------------------------------------------------------------------


def ppo_loss_and_grads(net: ActorCritic, mb: RolloutBatch, hp: HyperParams):
    """Total minibatch loss, parameter gradients and diagnostics."""
    n = len(mb)
    mu, ls, v = net.forward(mb.obs)
    A = mb.advantages
    R = mb.returns
    inv_var = np.exp(-2.0 * ls)
    diff = mb.actions - mu
    logp = gaussian_logp(mb.actions, mu, ls)
    ratio = np.exp(logp - mb.logp)

    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * A
    unclipped = surr1 <= surr2
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    d_ratio = np.where(unclipped, -A / n, 0.0)
    d_mu = d_ratio * ratio * diff * inv_var
    d_ls = d_ratio * ratio * (diff * diff * inv_var - 1.0)

    var_old = np.exp(2.0 * mb.log_std)
    sq = var_old + (mb.mean - mu) ** 2
    kl = ls - mb.log_std + sq * inv_var / 2.0 - 0.5
    d_mu += hp.kl_coef / n * (mu - mb.mean) * inv_var
    d_ls += hp.kl_coef / n * (1.0 - sq * inv_var)

    entropy = gaussian_entropy(ls)
    d_ls -= hp.entropy_coef / n

    vf1 = (v - R) ** 2
    step = v - mb.values
    inside = np.abs(step) <= hp.vf_clip
    # inside the clip range the two terms agree; select on the range so rounding in
    # values + step cannot flip the branch and drop the gradient
    vf2 = np.where(inside, vf1, (mb.values + np.clip(step, -hp.vf_clip, hp.vf_clip) - R) ** 2)
    vf = np.maximum(vf1, vf2)
    d_v = np.where(vf1 >= vf2, hp.vf_loss_coef / n * 2.0 * (v - R), 0.0)

    loss = policy_loss + hp.vf_loss_coef * vf.mean() + hp.kl_coef * kl.mean() - hp.entropy_coef * entropy.mean()
    grads = net.backward(d_mu, d_ls, d_v)
    stats = {
        "policy_loss": float(policy_loss),
        "vf_loss": float(vf.mean()),
        "kl": float(kl.mean()),
        "entropy": float(entropy.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > hp.clip)),
        "ratio_mean": float(ratio.mean()),
    }
    return float(loss), grads, stats


def prepare_batch(batch: RolloutBatch, hp: HyperParams) -> RolloutBatch:
    """Fill advantages and return targets (in reward_scale units)."""
    adv, ret = compute_advantages(batch.rewards * hp.reward_scale, batch.values, batch.dones, hp.gamma, hp.gae_lambda)
    batch.advantages = normalize(adv) if hp.normalize_advantages else adv
    batch.returns = ret
    return batch


def ppo_update(net: ActorCritic, opt: Adam, batch: RolloutBatch, hp: HyperParams, rng: np.random.Generator) -> dict:
    """Shuffled minibatch epochs over a prepared batch; returns mean diagnostics."""
    n = len(batch)
    acc: dict[str, list[float]] = {}
    first_ratio = None
    for epoch in range(hp.sgd_epochs):
        perm = rng.permutation(n)
        for k, start in enumerate(range(0, n, hp.minibatch)):
            mb = batch.subset(perm[start : start + hp.minibatch])
            loss, grads, stats = ppo_loss_and_grads(net, mb, hp)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss in epoch {epoch}, minibatch {k}", minibatch=(epoch, k))
            if first_ratio is None:
                first_ratio = stats["ratio_mean"]
            opt.step(net.params, grads)
            net.clamp_log_std()
            for key, val in stats.items():
                acc.setdefault(key, []).append(val)
    out = {k: float(np.mean(v)) for k, v in acc.items()}
    out["first_ratio"] = first_ratio
    return out


# --- evaluation helpers ----------------------------------------------------------


class PolicyAgent(Agent):
    """Deterministic policy: the Gaussian mean, clamped by the environment."""

    name = "agent"

    def __init__(self, net: ActorCritic):
        self.net = net

    def act(self, observation, view):
        mu, _, _ = self.net.forward(observation[None, :])
        return float(mu[0])


def policy_profits(
    net: ActorCritic, products: Sequence[ProductSeries], stats: TrainStats, fee: float = TRANSACTION_FEE
) -> np.ndarray:
    """Evaluation-mode profit of the deterministic policy on each product (lockstep)."""
    if not products:
        return np.empty(0)
    envs = [TradingEnv(stats, fee=fee, mode="evaluation") for _ in products]
    cur = np.stack([env.reset(p) for env, p in zip(envs, products)])
    for _ in range(EPISODE_LENGTH):
        mu, _, _ = net.forward(cur)
        cur = np.stack([env.step(a).observation for env, a in zip(envs, mu)])
    return np.array([episode_profit(env.records) for env in envs])


# --- training -----------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 200
    seed: int = 0
    fee: float = TRANSACTION_FEE
    hidden: tuple = (64, 64, 32)
    log_std_init: float = -0.5
    val_size: int = 24
    checkpoint_every: int = 50

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train settings: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def split_validation(train: Sequence[ProductSeries], val_size: int):
    """Hold out the chronologically last ``val_size`` training products."""
    n_val = min(val_size, max(len(train) - 1, 0))
    if n_val <= 0:
        return list(train), list(train)
    return list(train[:-n_val]), list(train[-n_val:])


class PpoTrainer:
    def __init__(self, train_products: Sequence[ProductSeries], stats: TrainStats, hp: HyperParams | None = None,
                 cfg: TrainConfig | None = None):
        self.hp = hp or HyperParams()
        self.cfg = cfg or TrainConfig()
        self.stats = stats
        self.pool, self.validation = split_validation(train_products, self.cfg.val_size)
        self.net = ActorCritic(hidden=self.cfg.hidden, seed=self.cfg.seed, log_std_init=self.cfg.log_std_init)
        self.opt = Adam(self.net.params, lr=self.hp.lr)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.envs = [TradingEnv(stats, fee=self.cfg.fee, mode="training") for _ in range(self.hp.n_actors)]
        self.iteration = 0
        self.curve: list[dict] = []

    def set_hyperparams(self, hp: HyperParams) -> None:
        if hp.n_actors != self.hp.n_actors:
            self.envs = [TradingEnv(self.stats, fee=self.cfg.fee, mode="training") for _ in range(hp.n_actors)]
        self.hp = hp
        self.opt.lr = hp.lr

    def step(self) -> dict:
        """One collect, advantage, update cycle plus validation."""
        idx = self.rng.integers(0, len(self.pool), size=self.hp.n_actors)
        batch = collect_rollouts(self.net.copy(), self.envs, [self.pool[i] for i in idx], self.rng)
        prepare_batch(batch, self.hp)
        stats = ppo_update(self.net, self.opt, batch, self.hp, self.rng)
        self.iteration += 1
        row = {
            "iter": self.iteration,
            "mean_profit": float(self.validation_profit()),
            "policy_loss": stats["policy_loss"],
            "vf_loss": stats["vf_loss"],
            "kl": stats["kl"],
            "entropy": stats["entropy"],
            "clip_frac": stats["clip_frac"],
        }
        self.curve.append(row)
        return row

    def validation_profit(self) -> float:
        return float(policy_profits(self.net, self.validation, self.stats, self.cfg.fee).mean())

    def train(self, iterations: int | None = None, out_dir: str | Path | None = None) -> list[dict]:
        iterations = self.cfg.iterations if iterations is None else iterations
        for _ in range(iterations):
            row = self.step()
            logger.info("iter %d  val profit %.3f  kl %.4f  clip %.3f", row["iter"], row["mean_profit"],
                        row["kl"], row["clip_frac"])
            if out_dir is not None and self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                self.save_checkpoint(Path(out_dir) / f"checkpoint_{self.iteration:05d}")
        if out_dir is not None:
            self.save_checkpoint(Path(out_dir) / "checkpoint_final")
            write_learning_curve(self.curve, Path(out_dir) / "learning_curve.csv")
        return self.curve

    def save_checkpoint(self, directory: str | Path) -> None:
        d = Path(directory)
        self.net.save(d)
        st = self.opt.state_dict()
        np.savez(d / "optimizer.npz", **{f"m.{k}": v for k, v in st["m"].items()},
                 **{f"v.{k}": v for k, v in st["v"].items()})
        meta = {"iteration": self.iteration, "adam_t": st["t"], "hyperparams": self.hp.to_dict(),
                "train_config": self.cfg.to_dict(), "rng_state": self.rng.bit_generator.state}
        (d / "trainer.json").write_text(json.dumps(meta, indent=2))

    def load_checkpoint(self, directory: str | Path) -> None:
        d = Path(directory)
        self.net = ActorCritic.load(d)
        meta = json.loads((d / "trainer.json").read_text())
        with np.load(d / "optimizer.npz") as z:
            m = {k[2:]: z[k] for k in z.files if k.startswith("m.")}
            v = {k[2:]: z[k] for k in z.files if k.startswith("v.")}
        self.opt = Adam(self.net.params, lr=self.hp.lr)
        self.opt.load_state_dict({"t": meta["adam_t"], "m": m, "v": v})
        self.iteration = meta["iteration"]
        self.rng.bit_generator.state = meta["rng_state"]


def write_learning_curve(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


class PpoPbtTask:
    """Adapter exposing a PPO trainer through the PBT scheduler's callables.

    Members share the training data and validation slice; fitness is the mean
    evaluation-mode profit on that slice under the deterministic policy.
    """

    def __init__(self, train_products: Sequence[ProductSeries], stats: TrainStats, base_hp: HyperParams,
                 cfg: TrainConfig):
        self.train_products = train_products
        self.stats = stats
        self.base_hp = base_hp
        self.cfg = cfg

    def hyperparams(self, hp: dict) -> HyperParams:
        return HyperParams.from_dict({**self.base_hp.to_dict(), **hp})

    def init(self, hp: dict, member_id: int) -> PpoTrainer:
        cfg = TrainConfig.from_dict({**self.cfg.to_dict(), "seed": self.cfg.seed * 1000 + member_id})
        return PpoTrainer(self.train_products, self.stats, self.hyperparams(hp), cfg)

    def train(self, trainer: PpoTrainer, hp: dict, n: int) -> PpoTrainer:
        trainer.set_hyperparams(self.hyperparams(hp))
        for _ in range(n):
            trainer.step()
        return trainer

    def evaluate(self, trainer: PpoTrainer) -> float:
        return trainer.validation_profit()

    def copy(self, trainer: PpoTrainer, member_id: int, round_: int) -> PpoTrainer:
        clone = copy.deepcopy(trainer)
        clone.rng = np.random.default_rng([self.cfg.seed, member_id, round_])
        return clone
