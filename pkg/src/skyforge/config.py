"""Pipeline configuration: one structured file, every stage parameter exposed.

Angles are degrees in the file (``*_deg`` keys) and radians in memory. The
config file is YAML (JSON is valid YAML, so plain JSON works too).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .annotate import SelectionParams
from .cameras import CameraIntrinsics, OrbitConfig
from .navigation import NavConfig
from .planning import PlannerLimits


@dataclass
class SelectionSettings:
    d_th1: float = 3.0
    d_th2: float = 4.0
    theta_th_deg: float = 35.0
    n_t: int = 5
    fusion_iou_threshold: float = 0.25

    def to_params(self) -> SelectionParams:
        return SelectionParams(d_th1=self.d_th1, d_th2=self.d_th2,
                               theta_th=math.radians(self.theta_th_deg), n_t=self.n_t)


@dataclass
class OrbitSettings:
    r_orb: float = 0.1
    pitch_levels_deg: list = field(default_factory=lambda: [-60.0, -30.0, 0.0, 30.0, 60.0])
    yaw_step_deg: float = 30.0

    def to_orbit(self) -> OrbitConfig:
        return OrbitConfig(
            r_orb=self.r_orb,
            pitch_levels=tuple(math.radians(a) for a in self.pitch_levels_deg),
            yaw_step=math.radians(self.yaw_step_deg),
        )


@dataclass
class GridSettings:
    resolution: float = 0.1
    opacity_threshold: float = 0.5
    inflation_radius: float = 0.3


@dataclass
class NavSettings:
    n_sets: int = 2
    targets_per_set: int = 3
    d_min: float = 2.0
    d_max: float = 10.0
    cylinder_radius: float = 0.2
    safety_radius: float = 0.3
    approach_clearance: float = 0.5
    distance_mode: str = "straight_line"

    def to_nav_config(self, seed: int) -> NavConfig:
        return NavConfig(
            n_sets=self.n_sets, targets_per_set=self.targets_per_set,
            d_min=self.d_min, d_max=self.d_max,
            cylinder_radius=self.cylinder_radius, safety_radius=self.safety_radius,
            approach_clearance=self.approach_clearance, seed=seed,
            distance_mode=self.distance_mode,
        )


@dataclass
class PlannerSettings:
    v_max: float = 2.0
    a_max: float = 2.0
    sample_rate: float = 30.0
    smooth_alpha: float = 0.5
    smooth_iterations: int = 10
    heading_window: int = 5

    def to_limits(self) -> PlannerLimits:
        return PlannerLimits(v_max=self.v_max, a_max=self.a_max, sample_rate=self.sample_rate)


@dataclass
class RenderSettings:
    width: int = 16
    height: int = 16
    fov_deg: float = 90.0

    def to_intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_deg)


@dataclass
class ExplorationSettings:
    rig_stride: int = 4           # place a four-view rig every Nth waypoint
    approach_clearance: float = 0.5


@dataclass
class ClientSettings:
    mode: str = "mock"            # "mock" or "http"
    world_url: str | None = None
    detect_url: str | None = None
    llm_url: str | None = None
    timeout_s: float = 30.0
    retries: int = 3
    backoff_s: float = 0.5
    detector_sigma0: float = 0.2
    detector_d_th1: float = 3.0


@dataclass
class PipelineConfig:
    output_root: str = "out"
    master_seed: int = 0
    workers: int = 4
    taxonomy_path: str | None = None
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    orbit: OrbitSettings = field(default_factory=OrbitSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    nav: NavSettings = field(default_factory=NavSettings)
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    render: RenderSettings = field(default_factory=RenderSettings)
    exploration: ExplorationSettings = field(default_factory=ExplorationSettings)
    clients: ClientSettings = field(default_factory=ClientSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict | None) -> "PipelineConfig":
        payload = dict(payload or {})
        kwargs = {}
        for f in fields(cls):
            if f.name not in payload:
                continue
            value = payload.pop(f.name)
            nested = _NESTED.get(f.name)
            kwargs[f.name] = nested(**value) if nested and isinstance(value, dict) else value
        if payload:
            raise ValueError(f"unknown config keys: {sorted(payload)}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        payload = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(payload, dict):
            raise ValueError("config file must contain a mapping")
        return cls.from_dict(payload)


_NESTED = {
    "selection": SelectionSettings,
    "orbit": OrbitSettings,
    "grid": GridSettings,
    "nav": NavSettings,
    "planner": PlannerSettings,
    "render": RenderSettings,
    "exploration": ExplorationSettings,
    "clients": ClientSettings,
}
