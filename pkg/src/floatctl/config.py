"""Run configuration: one YAML document, one section per subsystem.

Every key is optional; anything missing takes the default shown by
``floatctl config``.  Matrices given as diagonals may be written as plain
lists.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .dynamics import PlatformParams, ThrusterLayout
from .mpc import MpcConfig, MpcWeights
from .ppo import PpoConfig
from .pwpf import PwpfConfig
from .reward import RewardConfig


@dataclass(frozen=True)
class EpisodeConfig:
    pwpf_substeps: int = 10
    train_time_limit: float = 60.0          # s
    test_time_limit: float = 100.0          # s
    position_tolerance: float = 0.05        # m, strict
    speed_tolerance: float = 0.1            # m/s
    angle_tolerance_deg: float = 5.0
    rate_tolerance_deg: float = 1.0         # deg/s
    # initial-condition box around the target
    init_position_range: tuple = (1.5, 1.0)     # m, half-widths in x and y
    init_speed_range: float = 0.05              # m/s, per component
    init_rate_range_deg: float = 2.0            # deg/s
    init_full_heading: bool = True              # uniform heading in (-pi, pi]
    target: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    room_half_extent: tuple = (2.5, 1.5)        # 5 m x 3 m floor

    def __post_init__(self):
        if self.train_time_limit <= 0 or self.test_time_limit <= 0:
            raise ValueError("time limits must be positive")
        if min(self.position_tolerance, self.speed_tolerance, self.angle_tolerance_deg,
               self.rate_tolerance_deg) <= 0:
            raise ValueError("success thresholds must be positive")
        if self.pwpf_substeps < 1:
            raise ValueError("need at least one modulator sub-step")
        for name in ("init_position_range", "target", "room_half_extent"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))


@dataclass(frozen=True)
class NetworkConfig:
    actor_hidden: tuple = (128, 64)
    critic_hidden: tuple = (128, 64, 8)
    initial_std: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(v) for v in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(v) for v in self.critic_hidden))


@dataclass(frozen=True)
class Disturbance:
    time: float
    dv: tuple
    domega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dv", tuple(float(v) for v in self.dv))
        if len(self.dv) != 2 or not np.all(np.isfinite(self.dv)) or not np.isfinite(self.domega):
            raise ValueError("disturbance needs a finite 2-vector dv and finite domega")


@dataclass(frozen=True)
class DisturbanceSchedule:
    events: tuple = ()
    duration: float = 100.0

    def __post_init__(self):
        events = tuple(e if isinstance(e, Disturbance) else Disturbance(**e) for e in self.events)
        object.__setattr__(self, "events", events)
        times = [e.time for e in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("disturbance times must be strictly increasing")
        if times and (times[0] < 0 or times[-1] >= self.duration):
            raise ValueError("disturbance times must fall inside the run")

    @classmethod
    def default(cls) -> "DisturbanceSchedule":
        """Four 0.15 m/s pushes every 20 s; the second one also spins the platform."""
        d = 0.15 / np.sqrt(2.0)
        return cls(events=(
            Disturbance(20.0, (0.15, 0.0)),
            Disturbance(40.0, (0.0, -0.15), float(np.deg2rad(10.0))),
            Disturbance(60.0, (-d, d)),
            Disturbance(80.0, (d, d)),
        ), duration=100.0)

    def to_dict(self) -> dict:
        return {"duration": self.duration,
                "events": [{"time": e.time, "dv": list(e.dv), "domega": e.domega}
                           for e in self.events]}

    @classmethod
    def load(cls, path) -> "DisturbanceSchedule":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        return cls(events=tuple(data.get("events", ())), duration=float(data.get("duration", 100.0)))


SECTIONS = {
    "platform": PlatformParams,
    "thrusters": ThrusterLayout,
    "pwpf": PwpfConfig,
    "mpc": MpcConfig,
    "mpc_weights": MpcWeights,
    "ppo": PpoConfig,
    "reward": RewardConfig,
    "episode": EpisodeConfig,
    "network": NetworkConfig,
}


def _plain(value):
    if isinstance(value, np.ndarray):
        if value.ndim == 2 and value.shape[0] == value.shape[1] and not np.count_nonzero(
                value - np.diag(np.diag(value))):
            return [_plain(v) for v in np.diag(value)]
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else (".inf" if v > 0 else "-.inf")
    if isinstance(value, np.integer):
        return int(value)
    return value


def _unplain(value):
    if isinstance(value, list):
        return [_unplain(v) for v in value]
    if value == ".inf":
        return float("inf")
    if value == "-.inf":
        return float("-inf")
    return value


@dataclass(frozen=True)
class RunConfig:
    platform: PlatformParams = field(default_factory=PlatformParams)
    thrusters: ThrusterLayout = field(default_factory=ThrusterLayout)
    pwpf: PwpfConfig = field(default_factory=PwpfConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mpc_weights: MpcWeights = field(default_factory=MpcWeights)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if abs(self.mpc.step - self.platform.dt) > 1e-12:
            raise ValueError("MPC step must equal the control period")

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _plain(getattr(section, f.name))
                         for f in dataclasses.fields(section)}
        return out

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = data or {}
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, klass in SECTIONS.items():
            section = data.get(name) or {}
            known = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - known
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = klass(**{k: _unplain(v) for k, v in section.items()})
        return cls(**kwargs)

    def with_mode(self, mode: str) -> "RunConfig":
        return dataclasses.replace(self, reward=dataclasses.replace(self.reward, mode=mode))

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(
            self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]
