"""
Single JSON configuration tree for every subcommand.

Unknown keys are rejected at any depth. Comments tagged ``method default``
mark values that define the planning method; untagged defaults are tuning
choices of this package.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .augment import AugmentConfig
from .errors import ConfigError
from .planner import CostConfig, DisplacementAnchors
from .simctrl.control import PIDGains


@dataclass
class DataSection:
    n_drives: int = 300                 # synthetic natural drives when no frames file is given
    frames_file: Optional[str] = None   # frame log (newline JSON); overrides n_drives
    drive_seconds: float = 14.0
    frame_every: float = 0.4


@dataclass
class AnchorSection:
    k: int = 6                                                      # drive-path anchors (method default)
    iters: int = 50
    lookaheads: Tuple[float, ...] = (0.25, 1.7, 4.0, 6.0, 8.5)      # displacement anchor reach after 1 s, m (method default)
    horizon: int = 15                                               # future steps per plan (method default)
    dt: float = 0.2                                                 # label step, s (method default)
    path_points: int = 15                                           # points per drive path (method default)
    spacing: float = 2.0                                            # drive path spacing, m (method default)
    file: Optional[str] = None                                      # precomputed anchors JSON


@dataclass
class AugmentSection:
    alpha: float = 0.1                  # insertion probability (method default)
    delta: float = 2.0
    d_safe: float = 1.0
    near_range: Tuple[float, float] = (6.0, 20.0)
    far_range: Tuple[float, float] = (30.0, 50.0)
    arrival_time_range: Tuple[float, float] = (1.0, 8.0)
    threat_prob: float = 0.5
    threat_window: float = 0.4
    min_waypoint_arc: float = 5.0
    max_agent_speed: float = 15.0
    agent_dims: Tuple[float, float] = (4.5, 2.0)
    ego_dims: Tuple[float, float] = (4.5, 2.0)
    max_agents: Optional[int] = None
    max_tries: int = 50

    def build(self) -> AugmentConfig:
        return AugmentConfig(**dataclasses.asdict(self))


@dataclass
class CostSection:
    w_progress: float = 1.0
    w_collision: float = 100.0
    w_smooth: float = 1.0
    collision_check_dt: float = 0.05
    ego_dims: Tuple[float, float] = (4.5, 2.0)
    clearance: float = 0.5              # samples are 0.2 s apart; fast crossers move ~1.5 m between them

    def build(self) -> CostConfig:
        return CostConfig(**dataclasses.asdict(self))


@dataclass
class TrainSection:
    hidden: int = 32
    epochs: int = 100
    lr: float = 0.05
    batch_size: int = 32
    init_scale: float = 1.0
    lambda_plan: float = 2.0            # weight of the displacement regression loss (method default)


@dataclass
class GainsSection:
    kp: float = 1.0
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 1.0
    output_limit: Tuple[float, float] = (-1.0, 1.0)

    def build(self) -> PIDGains:
        return PIDGains(self.kp, self.ki, self.kd, self.integral_limit, tuple(self.output_limit))


@dataclass
class ControlSection:
    # tuned on the tracking tests, not published values
    steer: GainsSection = field(default_factory=lambda: GainsSection(1.2, 0.05, 0.05, 1.0, (-0.6, 0.6)))
    speed: GainsSection = field(default_factory=lambda: GainsSection(2.0, 0.1, 0.0, 0.5, (-6.0, 2.5)))
    dt_sim: float = 0.05
    replan_every: float = 0.2


@dataclass
class SuiteSection:
    families: Tuple[str, ...] = ("cut_in", "crossing", "lead_brake", "merge")
    n_per_family: int = 50
    seed: int = 7
    scenario_files: Tuple[str, ...] = ()


@dataclass
class BenchSection:
    variants: Tuple[str, ...] = ("parallel", "cascaded", "cascaded_aug")
    aug_alpha: float = 0.1              # insertion probability of the augmented variant (method default)


@dataclass
class Config:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    anchors: AnchorSection = field(default_factory=AnchorSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    cost: CostSection = field(default_factory=CostSection)
    train: TrainSection = field(default_factory=TrainSection)
    control: ControlSection = field(default_factory=ControlSection)
    suite: SuiteSection = field(default_factory=SuiteSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def disp_anchors(self) -> DisplacementAnchors:
        a = self.anchors
        return DisplacementAnchors(tuple(a.lookaheads), a.horizon, a.dt)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(tp, value, where)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _convert(inner, value, where)
    if origin in (tuple, list, Tuple, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if args and args[-1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if args and len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def _build(cls, d: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}" if where else k) for k, v in d.items()}
    return cls(**kwargs)


def config_from_dict(d: dict) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _build(Config, d, "")
    try:
        cfg.augment.build()
        cfg.cost.build()
        cfg.control.steer.build()
        cfg.control.speed.build()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(d)
