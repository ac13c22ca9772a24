"""HTTP service wrapping the pipeline: scene/batch generation, stats, audit.

Run with `uvicorn skyforge.service:app` (or `forge serve`). The `forge` CLI
talks to these endpoints, in-process by default.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

from .config import PipelineConfig
from .pipeline import audit_root, compute_stats, run_batch, run_scene

logger = logging.getLogger(__name__)


class SelectionModel(StrictModel):
    d_th1: float = 3.0
    d_th2: float = 4.0
    theta_th_deg: float = 35.0
    n_t: int = 5
    fusion_iou_threshold: float = 0.25


class OrbitModel(StrictModel):
    r_orb: float = 0.1
    pitch_levels_deg: list[float] = [-60.0, -30.0, 0.0, 30.0, 60.0]
    yaw_step_deg: float = 30.0


class GridModel(StrictModel):
    resolution: float = 0.1
    opacity_threshold: float = 0.5
    inflation_radius: float = 0.3


class NavModel(StrictModel):
    n_sets: int = 2
    targets_per_set: int = 3
    d_min: float = 2.0
    d_max: float = 10.0
    cylinder_radius: float = 0.2
    safety_radius: float = 0.3
    approach_clearance: float = 0.5
    distance_mode: str = "straight_line"


class PlannerModel(StrictModel):
    v_max: float = 2.0
    a_max: float = 2.0
    sample_rate: float = 30.0
    smooth_alpha: float = 0.5
    smooth_iterations: int = 10
    heading_window: int = 5


class RenderModel(StrictModel):
    width: int = 16
    height: int = 16
    fov_deg: float = 90.0


class ExplorationModel(StrictModel):
    rig_stride: int = 4
    approach_clearance: float = 0.5


class ClientsModel(StrictModel):
    mode: str = "mock"
    world_url: str | None = None
    detect_url: str | None = None
    llm_url: str | None = None
    timeout_s: float = 30.0
    retries: int = 3
    backoff_s: float = 0.5
    detector_sigma0: float = 0.2
    detector_d_th1: float = 3.0


class ConfigModel(StrictModel):
    output_root: str = "out"
    master_seed: int = 0
    workers: int = 4
    taxonomy_path: str | None = None
    selection: SelectionModel = Field(default_factory=SelectionModel)
    orbit: OrbitModel = Field(default_factory=OrbitModel)
    grid: GridModel = Field(default_factory=GridModel)
    nav: NavModel = Field(default_factory=NavModel)
    planner: PlannerModel = Field(default_factory=PlannerModel)
    render: RenderModel = Field(default_factory=RenderModel)
    exploration: ExplorationModel = Field(default_factory=ExplorationModel)
    clients: ClientsModel = Field(default_factory=ClientsModel)

    def to_core(self) -> PipelineConfig:
        return PipelineConfig.from_dict(self.model_dump())


class SceneRequest(StrictModel):
    seed: int = 0
    config: ConfigModel = Field(default_factory=ConfigModel)


class SceneResponse(StrictModel):
    scene_id: str
    status: str
    output_dir: str
    archived_episodes: int
    manifest: dict


class BatchRequest(StrictModel):
    scenes: int = Field(ge=1)
    config: ConfigModel = Field(default_factory=ConfigModel)


class BatchResponse(StrictModel):
    n_scenes: int
    succeeded: int
    failed: int
    output_root: str
    manifest: dict


class RootRequest(StrictModel):
    root: str


class StatsResponse(StrictModel):
    scene_count: int
    trajectory_count: int
    length_mean: float | None
    length_median: float | None
    category_histogram: dict[str, int]
    unique_label_count: int
    object_count_histogram: dict[str, int]


class ValidateResponse(StrictModel):
    scenes: int
    targets_checked: int
    ok: bool
    failures: list[dict]


app = FastAPI(title="skyforge", description="Aerial navigation data generation service")


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/scene", response_model=SceneResponse)
def scene_endpoint(request: SceneRequest) -> SceneResponse:
    config = request.config.to_core()
    manifest = run_scene(config, request.seed)
    return SceneResponse(
        scene_id=manifest["scene_id"],
        status=manifest["status"],
        output_dir=f"{config.output_root}/{manifest['scene_id']}",
        archived_episodes=manifest.get("archived_episodes", 0),
        manifest=manifest,
    )


@app.post("/batch", response_model=BatchResponse)
def batch_endpoint(request: BatchRequest) -> BatchResponse:
    config = request.config.to_core()
    manifest = run_batch(config, request.scenes)
    return BatchResponse(
        n_scenes=manifest["n_scenes"],
        succeeded=manifest["succeeded"],
        failed=manifest["failed"],
        output_root=config.output_root,
        manifest=manifest,
    )


@app.post("/stats", response_model=StatsResponse)
def stats_endpoint(request: RootRequest) -> StatsResponse:
    try:
        stats = compute_stats(request.root)
    except ValueError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    return StatsResponse(**stats.to_dict())


@app.post("/validate", response_model=ValidateResponse)
def validate_endpoint(request: RootRequest) -> ValidateResponse:
    try:
        report = audit_root(request.root)
    except ValueError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    return ValidateResponse(**report)
