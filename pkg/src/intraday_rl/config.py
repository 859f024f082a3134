"""Run configuration, stored as TOML.

Every section is optional; missing keys take the defaults below, which for
``[ppo]`` are the tuned PPO hyperparameters (clip 0.432, entropy 0.001433,
gamma 0, KL 0.5, lr 1e-4, 7 SGD epochs, minibatch 422, batch 2532, value
clip 10, value coefficient 0.984103).

Example::

    [synthetic]
    n_products = 240
    wave_amplitude = 10.0

    [ppo]
    gamma = 1.0
    gae_lambda = 0.95

    [train]
    iterations = 200
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

from .ppo import HyperParams, TrainConfig
from .synthetic import SyntheticConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class EnvConfig:
    fee: float = 0.2
    outlier_upper: float = 150.0
    outlier_lower: float = -50.0
    test_fraction: float = 0.1
    test_after: str = ""


@dataclass
class PbtConfig:
    population: int = 8
    eval_interval: int = 10
    budget: int = 500
    quantile: float = 0.25
    seed: int = 0


@dataclass
class EvalConfig:
    agents: list = field(default_factory=lambda: ["agent", "bl_first", "bl_wf", "bl_pf", "bl_random"])
    seed: int = 0


@dataclass
class RunConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: HyperParams = field(default_factory=HyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    pbt: PbtConfig = field(default_factory=PbtConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            section = getattr(self, f.name)
            out[f.name] = section.to_dict() if hasattr(section, "to_dict") else asdict(section)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, f in known.items():
            section_cls = f.default_factory().__class__
            data = d.get(name, {})
            if hasattr(section_cls, "from_dict"):
                kwargs[name] = section_cls.from_dict(data)
            else:
                valid = {g.name for g in fields(section_cls)}
                bad = set(data) - valid
                if bad:
                    raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
                kwargs[name] = section_cls(**data)
        return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    with open(path, "rb") as fh:
        return RunConfig.from_dict(tomllib.load(fh))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.to_dict(), fh)
