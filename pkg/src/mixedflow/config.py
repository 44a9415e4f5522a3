"""Scenario and training configuration, presets and config-file IO."""
from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

METERS_PER_MILE = 1609.344
DENSITIES_VPM = (25.0, 40.0, 55.0, 70.0)
PENETRATIONS = (0.25, 0.5, 0.75)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def vpm_to_vpkm(density_vpm: float) -> float:
    """Vehicles per mile per lane -> vehicles per km per lane."""
    return density_vpm * 1000.0 / METERS_PER_MILE


def round_half_up(x: float) -> int:
    # np.round / round() use banker's rounding; counts must not depend on parity
    return int(math.floor(x + 0.5))


@dataclass
class IdmParams:
    a_max: float = 2.6
    b_comf: float = 4.5
    s0: float = 1.0
    delta: float = 4.0
    b_emergency: float = 9.0
    # desired time headway [s] keyed "<follower><leader>", H = HV, A = AV
    headway: dict = field(default_factory=lambda: {"HH": 1.5, "HA": 1.5, "AA": 1.0, "AH": 1.25})

    def h_star(self, follower: int, leader: int) -> float:
        tag = {1: "H", 2: "A"}
        return float(self.headway[tag[int(follower)] + tag[int(leader)]])

    def headway_matrix(self):
        """3x3 array indexed by class code (1 = HV, 2 = AV); row 0 / col 0 unused."""
        m = np.full((3, 3), np.nan)
        for f in (1, 2):
            for lead in (1, 2):
                m[f, lead] = self.h_star(f, lead)
        return m


@dataclass
class LaneChangeParams:
    politeness: float = 0.3
    threshold: float = 0.1
    cooldown: float = 3.0


@dataclass
class RewardWeights:
    w_speed: float = 1.0
    w_lane_change: float = 1.0


@dataclass
class ScenarioConfig:
    density_vpm: float = 40.0  # per lane
    av_penetration: float = 0.5
    ring_length: float = 1000.0
    n_lanes: int = 3
    dt: float = 0.5
    loading_time: float = 100.0
    episode_length: float = 1200.0
    vehicle_length: float = 5.0
    hv_speed_range: tuple = (17.5, 25.0)
    av_speed_range: tuple = (21.0, 30.0)
    sensing_radius: float = 100.0
    idm: IdmParams = field(default_factory=IdmParams)
    lane_change: LaneChangeParams = field(default_factory=LaneChangeParams)
    reward: RewardWeights = field(default_factory=RewardWeights)

    @property
    def density_vpkm(self) -> float:
        return vpm_to_vpkm(self.density_vpm)

    @property
    def vehicles_per_lane(self) -> int:
        return round_half_up(self.density_vpkm * self.ring_length / 1000.0)

    @property
    def n_vehicles(self) -> int:
        return self.vehicles_per_lane * self.n_lanes

    @property
    def n_avs(self) -> int:
        return round_half_up(self.av_penetration * self.n_vehicles)

    @property
    def name(self) -> str:
        return f"d{self.density_vpm:g}_p{self.av_penetration:g}"

    def validate(self) -> None:
        if self.ring_length <= 0 or self.n_lanes < 1:
            raise ConfigError("ring_length must be > 0 and n_lanes >= 1")
        if not 0.0 <= self.av_penetration <= 1.0:
            raise ConfigError(f"av_penetration {self.av_penetration} outside [0, 1]")
        if self.density_vpm < 0:
            raise ConfigError("density must be non-negative")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not self.loading_time < self.episode_length:
            raise ConfigError("loading_time must be shorter than episode_length")
        if min(self.idm.headway.values()) <= 0:
            raise ConfigError("headways must be positive")

    def scenario_hash(self) -> str:
        """Stable 16-hex digest of everything that shapes the environment."""
        data = to_dict(self)
        data.pop("episode_length")  # run length, not environment
        payload = json.dumps(data, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class TrainConfig:
    episodes: int = 2000
    warmup_episodes: int = 30
    gamma: float = 0.99
    batch_size: int = 64
    buffer_capacity: int = 100_000
    target_sync: int = 1000  # gradient steps
    decision_interval: float = 1.0
    lr0: float = 1e-3
    lr_decay: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay: float = 300.0
    hidden: tuple = (256, 128, 64)
    obs_size: int = 200
    collision_reward: float = -100.0
    smoothing_window: int = 20

    def validate(self) -> None:
        if not 0 <= self.warmup_episodes < self.episodes:
            raise ConfigError("warmup_episodes must be < episodes")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must hold at least one batch")


@dataclass
class EvalConfig:
    episodes: int = 10
    episode_length: float = 1200.0
    log_every: int = 1
    edie_dx: float = 250.0
    edie_dt: float = 8.0
    spatial_cells: int = 10
    post_ne_window: float = 600.0
    taus: tuple = (0.0, 0.01, 0.04)


@dataclass
class Preset:
    name: str
    scenario: ScenarioConfig
    train: TrainConfig
    evaluate: EvalConfig
    densities: tuple
    penetrations: tuple

    def scenarios(self, densities=None, penetrations=None) -> list[ScenarioConfig]:
        ds = tuple(densities) if densities else self.densities
        ps = tuple(penetrations) if penetrations else self.penetrations
        return [
            dataclasses.replace(self.scenario, density_vpm=float(d), av_penetration=float(p))
            for d, p in itertools.product(ds, ps)
        ]


def make_preset(name: str) -> Preset:
    if name == "full":
        return Preset("full", ScenarioConfig(), TrainConfig(), EvalConfig(), DENSITIES_VPM, PENETRATIONS)
    if name == "desk":
        sc = ScenarioConfig(ring_length=500.0, episode_length=600.0)
        ev = EvalConfig(episode_length=600.0)
        return Preset("desk", sc, TrainConfig(episodes=200), ev, (25.0, 40.0), (0.5,))
    raise ConfigError(f"unknown preset {name!r} (expected 'full' or 'desk')")


# --- serialisation -----------------------------------------------------------

def to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(x) for x in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}")
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in {cls.__name__}")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            value = _from_dict(type(default), value)
        elif isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, dict):
            value = {**default, **value}
        elif isinstance(default, float) and isinstance(value, int):
            value = float(value)
        kwargs[key] = value
    return cls(**kwargs)


def preset_to_dict(preset: Preset) -> dict:
    return {
        "preset": preset.name,
        "densities": list(preset.densities),
        "penetrations": list(preset.penetrations),
        "scenario": to_dict(preset.scenario),
        "train": to_dict(preset.train),
        "evaluate": to_dict(preset.evaluate),
    }


def dump_config(preset: Preset) -> str:
    return yaml.safe_dump(preset_to_dict(preset), sort_keys=False)


def load_config(path: str | Path | None, preset: str = "full") -> Preset:
    """Start from ``preset`` and overlay whatever a YAML file sets."""
    base = make_preset(preset)
    if path is None:
        return base
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "preset" in data:
        base = make_preset(data.pop("preset"))
    merged = preset_to_dict(base)
    for key in ("scenario", "train", "evaluate"):
        if key in data:
            merged[key] = _deep_merge(merged[key], data.pop(key))
    for key in ("densities", "penetrations"):
        if key in data:
            merged[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    out = Preset(
        base.name,
        _from_dict(ScenarioConfig, merged["scenario"]),
        _from_dict(TrainConfig, merged["train"]),
        _from_dict(EvalConfig, merged["evaluate"]),
        tuple(float(d) for d in merged["densities"]),
        tuple(float(p) for p in merged["penetrations"]),
    )
    out.scenario.validate()
    out.train.validate()
    return out


def _deep_merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in (b or {}).items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def scenario_from_dict(data: dict) -> ScenarioConfig:
    return _from_dict(ScenarioConfig, data)
