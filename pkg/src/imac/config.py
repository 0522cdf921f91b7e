"""Run configuration: one dataclass per ``[section]`` of the config file.

Defaults are desk-scale; where the original method used a different value at
full scale it is noted next to the field.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .envs import EnvSpec


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    env_id: str = "GridMaze"
    grid_size: int = 7
    max_steps: int = 64
    train_level_count: int = 40  # full scale: 200
    test_level_count: int = 100

    def spec(self) -> EnvSpec:
        return EnvSpec(self.env_id, self.grid_size, self.max_steps, 4, self.train_level_count, self.test_level_count)


@dataclass
class DataConfig:
    total_transitions: int = 99_000  # full scale: 1M per game


@dataclass
class WorldModelConfig:
    context: int = 4  # L
    hidden: tuple[int, ...] = (512, 512)
    noise_emb_dim: int = 16
    sigma_data: float = 0.5
    p_mean: float = -0.4
    p_std: float = 1.2
    sigma_min: float = 0.002
    sigma_max: float = 20.0
    rho: float = 7.0
    n_steps: int = 5
    churn: float = 0.0
    residual: bool = False
    steps: int = 5000  # full scale: 1000 epochs x 100 steps
    steps_per_epoch: int = 100
    batch_size: int = 32
    lr: float = 1e-3  # full scale: 4e-5
    weight_decay: float = 1e-2
    eps: float = 1e-8
    grad_clip: float = 10.0


@dataclass
class RewardModelConfig:
    ensemble: int = 10
    hidden: tuple[int, ...] = (256,)
    lstm: int = 128  # full scale: 512
    burn_in: int = 4  # B_R = L
    horizon: int = 15  # H; training sequences are burn_in + horizon long
    steps: int = 3000
    steps_per_epoch: int = 100
    batch_size: int = 32
    lr: float = 1e-3  # full scale: 4e-5
    weight_decay: float = 1e-2
    eps: float = 1e-8
    grad_clip: float = 10.0
    reward_mode: str = "argmax"  # argmax | expected


@dataclass
class AgentConfig:
    gamma: float = 0.985
    lam: float = 0.95
    entropy_weight: float = 0.001
    value_coeff: float = 0.5
    hidden: tuple[int, ...] = (256, 128)
    lstm: int = 128  # full scale: 512
    batch_size: int = 16  # imagined trajectories per update
    lr: float = 3e-4  # full scale: 4e-5
    weight_decay: float = 5e-5
    eps: float = 1e-8
    grad_clip: float = 10.0
    greedy_eval: bool = False


@dataclass
class HorizonConfig:
    fixed_h: int = 15
    h_min: int = 5
    h_max: int = 22


@dataclass
class CurriculumConfig:
    mode: str = "plr"  # fixed | random | plr
    score: str = "discounted"  # discounted | mean
    staleness: float = 0.1  # rho
    temperature: float = 0.1  # beta_T
    buffer_size: int = 2500
    replay_prob: float = 0.5
    reimagine: bool = True
    explore_train: bool = True


@dataclass
class ImaginationConfig:
    rebinarize: bool = False


@dataclass
class TrainConfig:
    epochs: int = 300  # full scale: 1000
    steps_per_epoch: int = 50  # full scale: 100
    eval_every: int = 10
    eval_train_levels: int = 20
    eval_test_levels: int = 20
    eval_episodes: int = 2


@dataclass
class BCConfig:
    steps: int = 2000
    batch_size: int = 32
    seq_len: int = 8
    lr: float = 5e-4
    weight_decay: float = 5e-5


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    rt: RewardModelConfig = field(default_factory=RewardModelConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    imagination: ImaginationConfig = field(default_factory=ImaginationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bc: BCConfig = field(default_factory=BCConfig)

    def validate(self) -> RunConfig:
        self.env.spec()
        if self.curriculum.mode not in ("fixed", "random", "plr"):
            raise ConfigError(f"curriculum.mode must be fixed|random|plr, got {self.curriculum.mode!r}")
        if self.curriculum.score not in ("discounted", "mean"):
            raise ConfigError(f"curriculum.score must be discounted|mean, got {self.curriculum.score!r}")
        if self.rt.reward_mode not in ("argmax", "expected"):
            raise ConfigError(f"rt.reward_mode must be argmax|expected, got {self.rt.reward_mode!r}")
        if not 0 <= self.agent.gamma < 1 or not 0 <= self.agent.lam <= 1:
            raise ConfigError("agent.gamma must be in [0, 1) and agent.lam in [0, 1]")
        if not 1 <= self.horizon.h_min <= self.horizon.h_max:
            raise ConfigError("horizon bounds must satisfy 1 <= h_min <= h_max")
        if self.world_model.n_steps < 1 or not 0 < self.world_model.sigma_min < self.world_model.sigma_max:
            raise ConfigError("world_model schedule must satisfy n_steps >= 1, 0 < sigma_min < sigma_max")
        return self

    def replace(self, **sections) -> RunConfig:
        """Copy with per-section overrides, e.g. ``replace(curriculum={"mode": "fixed"})``."""
        out = dataclasses.replace(self)
        for name, overrides in sections.items():
            setattr(out, name, dataclasses.replace(getattr(self, name), **overrides))
        return out


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    sections = {f.name for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        section = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(section)}
        updates = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            updates[key] = _parse_value(raw, getattr(section, key), f"{name}.{key}")
        setattr(cfg, name, dataclasses.replace(section, **updates))
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing config file: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"[{f.name}]")
        for sf in dataclasses.fields(getattr(cfg, f.name)):
            value = getattr(getattr(cfg, f.name), sf.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{sf.name} = {value}")
        lines.append("")
    return "\n".join(lines)
