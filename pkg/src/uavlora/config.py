"""Configuration dataclasses with nested-dict round trips and ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

from .channel import ChannelParams
from .energy import RotorParams, check_hover_budget

DEFAULT_STARTS = ((100.0, 100.0), (100.0, 600.0), (600.0, 100.0), (300.0, 300.0), (100.0, 350.0))
DEFAULT_SEEDS = (7, 41, 233, 490, 688)


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    x_max: float = 1000.0
    y_max: float = 1000.0
    n_uavs: int = 2
    n_eds: int = 50
    altitude: float = 150.0
    cs_pos: tuple = (900.0, 900.0, 150.0)
    duration_s: float = 400.0
    step_rate: float = 0.5  # steps per second
    cone_width_deg: float = 120.0
    n_speed_levels: int = 5  # M
    n_dir_intervals: int = 16  # N
    s_max: float = 30.0
    d_safe: float = 3.0
    max_quota: int = 25
    comm_range: float | None = None  # None -> derived from the SF12 link budget
    circuit_power_w: float = 0.1
    reward_weights: tuple = (10.0, 1e-5, 200.0, 2.0, 400.0)
    arrival_radius: float = 50.0
    start_positions: tuple | None = None  # None -> DEFAULT_STARTS[:n_uavs]
    channel: ChannelParams = field(default_factory=ChannelParams)
    rotor: RotorParams = field(default_factory=RotorParams)

    @property
    def max_steps(self) -> int:
        return int(round(self.duration_s * self.step_rate))

    @property
    def dt(self) -> float:
        return 1.0 / self.step_rate

    @property
    def beta(self) -> float:
        return math.radians(self.cone_width_deg)

    def starts(self) -> list[tuple[float, float]]:
        if self.start_positions is not None:
            return [tuple(map(float, p[:2])) for p in self.start_positions]
        return list(DEFAULT_STARTS[: self.n_uavs])

    def validate(self) -> None:
        if self.n_uavs < 1 or self.n_eds < 0:
            raise ConfigError("need n_uavs >= 1 and n_eds >= 0")
        if self.x_max <= 0 or self.y_max <= 0 or self.altitude <= 0:
            raise ConfigError("area extent and altitude must be positive")
        if self.n_speed_levels < 1 or self.n_dir_intervals < 1:
            raise ConfigError("quantization counts must be >= 1")
        if self.step_rate <= 0 or self.max_steps < 1 or self.max_quota < 1:
            raise ConfigError("need step_rate > 0, at least one step per episode and max_quota >= 1")
        if len(self.reward_weights) != 5 or any(w < 0 for w in self.reward_weights):
            raise ConfigError("reward_weights must be five non-negative numbers")
        if self.comm_range is not None and self.comm_range <= 0:
            raise ConfigError("comm_range must be positive")
        if self.circuit_power_w <= 0:
            raise ConfigError("circuit power must be positive")
        starts = self.starts()
        if len(starts) != self.n_uavs:
            raise ConfigError(f"{len(starts)} start positions for {self.n_uavs} UAVs")
        for x, y in starts:
            if not (0 <= x <= self.x_max and 0 <= y <= self.y_max):
                raise ConfigError(f"start position {(x, y)} outside the area")
        try:
            check_hover_budget(self.rotor)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class PpoConfig:
    lr: float = 0.003
    clip: float = 0.2
    gamma: float = 0.9
    gae_lambda: float = 0.95
    entropy_coef: float = 0.001
    epochs: int = 4
    minibatches: int = 1
    buffer_episodes: int = 10  # B
    hidden: int = 128
    chunk_len: int = 10  # truncated-BPTT window
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_grad_norm: float = 10.0
    normalize_advantages: bool = True
    value_norm: bool = True  # critic learns running-normalised returns
    shared_reward: bool = False  # True -> every agent trains on the team reward
    share_actor: bool = False
    centralized_critic: bool = True  # False -> IPPO

    def validate(self) -> None:
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.epochs < 0 or self.minibatches < 1 or self.buffer_episodes < 1:
            raise ConfigError("epochs >= 0, minibatches >= 1, buffer_episodes >= 1")


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    episodes: int = 200
    seed: int = 7

    def validate(self) -> "RunConfig":
        self.env.validate()
        self.ppo.validate()
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        return _build(cls, data or {})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else fields[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value)
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted ``key=value`` overrides to a nested config dict (values parsed as JSON)."""
    out = json.loads(json.dumps(data))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _parse_value(text.strip())
    return out
