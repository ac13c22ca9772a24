"""Navigation target generation and episode collection.

Candidates from the annotated box map are accepted into a target set only if
all four eligibility checks pass from the drone's current position: the
position is outside the candidate's box, the box is visible along an
occlusion-checked ray corridor, the approach point has a clear safety region,
and the travel distance falls inside [d_min, d_max]. Accepted targets move
the drone; each new set restarts from the scene center.

Visibility and waypoint safety are evaluated against the RAW occupancy
lattice (the cylinder/safety radii provide the clearance margin); planning
runs on the inflated lattice. Using the inflated lattice here would put the
target's own inflation halo inside the occlusion corridor just before box
entry and reject everything.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotate import Box3D, CandidateSet, box_contains
from .cameras import CameraIntrinsics, CameraPose
from .planning import PlanningError, Trajectory6DoF, astar, path_length, write_trajectory_jsonl
from .splat import OccupancyGrid, SplatScene, query_depth

PROMPT_STYLES = ("object_centered", "relative_positioned", "appearance_centered")
FRAME_SAMPLE_INTERVAL = 30


class EpisodeAborted(RuntimeError):
    def __init__(self, leg_index: int, reason: str):
        super().__init__(f"leg {leg_index} failed: {reason}")
        self.leg_index = leg_index
        self.reason = reason


@dataclass
class NavConfig:
    n_sets: int = 2
    targets_per_set: int = 3
    d_min: float = 2.0
    d_max: float = 10.0
    cylinder_radius: float = 0.2
    safety_radius: float = 0.3
    approach_clearance: float = 0.5
    seed: int = 0
    distance_mode: str = "straight_line"  # or "path_length"

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if min(self.cylinder_radius, self.safety_radius, self.approach_clearance) <= 0:
            raise ValueError("radii must be positive")
        if self.n_sets < 1 or self.targets_per_set < 1:
            raise ValueError("set counts must be positive")
        if self.distance_mode not in ("straight_line", "path_length"):
            raise ValueError("distance_mode must be 'straight_line' or 'path_length'")


@dataclass
class NavTarget:
    box: Box3D
    target_point: np.ndarray
    from_position: np.ndarray

    def __post_init__(self):
        self.target_point = np.asarray(self.target_point, dtype=float)
        self.from_position = np.asarray(self.from_position, dtype=float)


@dataclass
class TargetSet:
    set_id: int
    targets: list[NavTarget]
    partial: bool


@dataclass
class TargetGeneration:
    sets: list[TargetSet]
    rejections: dict[str, int]


@dataclass(frozen=True)
class PromptVariant:
    style: str
    text: str

    def __post_init__(self):
        if self.style not in PROMPT_STYLES:
            raise ValueError(f"unknown prompt style '{self.style}'")


@dataclass(frozen=True)
class QualityVerdict:
    accepted: bool
    reason: str


@dataclass
class EpisodeRecord:
    scene_id: str
    task_id: str
    targets: list[NavTarget]
    trajectory: Trajectory6DoF
    sampled_frame_indices: list[int]
    prompts: list[PromptVariant]          # variants for the final target (<= 3)
    quality: QualityVerdict
    set_id: int = 0
    target_prompts: list[list[PromptVariant]] = field(default_factory=list)
    frames: list[dict] = field(default_factory=list)  # metadata of sampled frames


def position_valid(drone, box: Box3D) -> bool:
    """True iff the drone is strictly outside the box (boundary counts as inside)."""
    return not bool(box_contains(box, np.asarray(drone, dtype=float))[0])


def _ray_box_entry(box: Box3D, origin: np.ndarray, direction: np.ndarray) -> float:
    """Ray parameter where the ray first enters the box (slab method), >= 0."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rel = origin - box.center
    o = np.array([c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]])
    d = np.array([c * direction[0] - s * direction[1], s * direction[0] + c * direction[1], direction[2]])
    t_near, t_far = -math.inf, math.inf
    for axis in range(3):
        if abs(d[axis]) < 1e-12:
            if abs(o[axis]) > box.half_extents[axis]:
                return 0.0  # parallel outside the slab; should not happen aiming at center
            continue
        t1 = (-box.half_extents[axis] - o[axis]) / d[axis]
        t2 = (box.half_extents[axis] - o[axis]) / d[axis]
        t_near = max(t_near, min(t1, t2))
        t_far = min(t_far, max(t1, t2))
    if t_near > t_far:
        return 0.0
    return max(t_near, 0.0)


def visible(grid: OccupancyGrid, drone, box: Box3D, cylinder_radius: float) -> bool:
    """Occlusion check along the ray from the drone to the box center.

    False iff some raw-occupied voxel center outside the target box lies
    within cylinder_radius of the ray segment strictly before first box
    entry.
    """
    drone = np.asarray(drone, dtype=float)
    centers = grid.raw_occupied_centers()
    if centers.shape[0] == 0:
        return True
    to_center = box.center - drone
    dist = float(np.linalg.norm(to_center))
    if dist < 1e-12:
        return True
    u = to_center / dist
    s_star = _ray_box_entry(box, drone, u)
    if s_star <= 0.0:
        return True

    exempt = box_contains(box, centers)
    pts = centers[~exempt]
    if pts.shape[0] == 0:
        return True
    rel = pts - drone
    proj = rel @ u
    clamped = np.clip(proj, 0.0, s_star)
    closest = drone + clamped[:, None] * u
    d_seg = np.linalg.norm(pts - closest, axis=1)
    blocked = (d_seg <= cylinder_radius) & (proj < s_star)
    return not bool(blocked.any())


def waypoint_safe(grid: OccupancyGrid, point, safety_radius: float) -> bool:
    """True iff no raw-occupied voxel center lies within safety_radius of point."""
    centers = grid.raw_occupied_centers()
    if centers.shape[0] == 0:
        return True
    d = np.linalg.norm(centers - np.asarray(point, dtype=float), axis=1)
    return not bool((d <= safety_radius).any())


def approach_point(box: Box3D, from_position, clearance: float) -> np.ndarray:
    """Free-space point next to the box, offset toward the start position.

    Lies on the segment from the box center toward from_position at
    bounding-sphere radius + clearance from the center, capped at
    from_position itself.
    """
    from_position = np.asarray(from_position, dtype=float)
    if bool(box_contains(box, from_position)[0]):
        raise ValueError("start inside target")
    sphere_r = float(np.linalg.norm(box.half_extents))
    offset = from_position - box.center
    dist = float(np.linalg.norm(offset))
    reach = min(sphere_r + clearance, dist)
    return box.center + offset / dist * reach


def generate_target_sets(
    scene: SplatScene,
    grid: OccupancyGrid,
    annotations: CandidateSet,
    config: NavConfig,
) -> TargetGeneration:
    """Draw candidates in seeded-shuffled order and chain eligible targets.

    Emits up to n_sets sets; sets short of targets_per_set are flagged
    partial, fully empty sets are dropped. Rejection counts per criterion are
    always returned.
    """
    rejections = {"position": 0, "occluded": 0, "unsafe": 0, "distance": 0}
    start = np.asarray(scene.center, dtype=float)
    if not grid.is_free(start):
        rejections["start_blocked"] = 1
        return TargetGeneration([], rejections)

    rng = random.Random(config.seed)
    boxes = annotations.boxes
    sets: list[TargetSet] = []
    for set_id in range(config.n_sets):
        drone = start.copy()
        targets: list[NavTarget] = []
        order = rng.sample(range(len(boxes)), len(boxes)) if boxes else []
        for idx in order:
            box = boxes[idx]
            if not position_valid(drone, box):
                rejections["position"] += 1
                continue
            if not visible(grid, drone, box, config.cylinder_radius):
                rejections["occluded"] += 1
                continue
            point = approach_point(box, drone, config.approach_clearance)
            if not (waypoint_safe(grid, point, config.safety_radius) and grid.is_free(point)):
                rejections["unsafe"] += 1
                continue
            if config.distance_mode == "path_length":
                try:
                    travel = path_length(astar(grid, drone, point))
                except PlanningError:
                    rejections["distance"] += 1
                    continue
            else:
                travel = float(np.linalg.norm(point - drone))
            if not config.d_min <= travel <= config.d_max:
                rejections["distance"] += 1
                continue
            targets.append(NavTarget(box=box, target_point=point, from_position=drone.copy()))
            drone = point
            if len(targets) == config.targets_per_set:
                break
        if targets:
            sets.append(TargetSet(set_id=set_id, targets=targets, partial=len(targets) < config.targets_per_set))
    return TargetGeneration(sets, rejections)


def sample_frames(frame_count: int, interval: int = FRAME_SAMPLE_INTERVAL) -> list[int]:
    """Frame indices at fixed intervals starting from 0, strictly below frame_count."""
    if frame_count < 0:
        raise ValueError("frame_count must be >= 0")
    return list(range(0, frame_count, interval))


def _concat_trajectories(legs: list[Trajectory6DoF]) -> Trajectory6DoF:
    times, positions, velocities, yaws, pitches = [], [], [], [], []
    offset = 0.0
    for i, leg in enumerate(legs):
        skip = 1 if i > 0 and len(leg) > 1 else 0
        times.append(leg.times[skip:] + offset)
        positions.append(leg.positions[skip:])
        velocities.append(leg.velocities[skip:])
        yaws.append(leg.yaws[skip:])
        pitches.append(leg.pitches[skip:])
        offset += float(leg.times[-1])
    return Trajectory6DoF(
        times=np.concatenate(times),
        positions=np.concatenate(positions),
        velocities=np.concatenate(velocities),
        yaws=np.concatenate(yaws),
        pitches=np.concatenate(pitches),
    )


def run_episode(
    scene: SplatScene,
    grid: OccupancyGrid,
    targets: list[NavTarget],
    planner,
    clients,
    *,
    scene_id: str = "scene",
    set_id: int = 0,
    intrinsics: CameraIntrinsics | None = None,
    context_boxes: list[Box3D] | None = None,
    start=None,
) -> EpisodeRecord:
    """Fly the target chain, render depth per sample, assess and prompt.

    Legs are planned between consecutive target points starting from the
    scene center; an unreachable leg raises EpisodeAborted with its index.
    Episodes failing the quality assessment come back flagged rejected.
    """
    if not targets:
        raise ValueError("targets must be non-empty")
    if intrinsics is None:
        intrinsics = CameraIntrinsics.from_fov(16, 16, 90.0)

    position = np.asarray(scene.center if start is None else start, dtype=float)
    legs: list[Trajectory6DoF] = []
    for i, target in enumerate(targets):
        try:
            _, leg = planner.plan_leg(grid, position, target.target_point)
        except PlanningError as exc:
            raise EpisodeAborted(i, str(exc)) from exc
        legs.append(leg)
        position = target.target_point
    trajectory = _concat_trajectories(legs)

    n = len(trajectory)
    metadata = []
    for i in range(n):
        pose = CameraPose.from_angles(trajectory.positions[i], float(trajectory.yaws[i]), float(trajectory.pitches[i]))
        depth = query_depth(scene, pose, intrinsics)
        finite = np.isfinite(depth)
        metadata.append({
            "index": i,
            "t": float(trajectory.times[i]),
            "finite_depth_fraction": float(finite.mean()),
            "mean_depth": float(depth[finite].mean()) if finite.any() else None,
        })
    sampled = sample_frames(n)
    quality = clients.language.assess_quality([metadata[i] for i in sampled])

    context = context_boxes if context_boxes is not None else [t.box for t in targets]
    target_prompts = []
    for target in targets:
        others = [b for b in context if b is not target.box]
        target_prompts.append(clients.language.generate_prompts(target, others))

    return EpisodeRecord(
        scene_id=scene_id,
        task_id=f"{scene_id}/set_{set_id:03d}",
        targets=targets,
        trajectory=trajectory,
        sampled_frame_indices=sampled,
        prompts=target_prompts[-1],
        quality=quality,
        set_id=set_id,
        target_prompts=target_prompts,
        frames=[metadata[i] for i in sampled],
    )


def task_payload(scene_id: str, set_id: int, targets: list[NavTarget]) -> dict:
    """Task file content: {scene_id, set_id, start, targets: [...]}."""
    return {
        "scene_id": scene_id,
        "set_id": set_id,
        "start": [float(v) for v in targets[0].from_position],
        "targets": [
            {
                "label": t.box.label,
                "target_point": [float(v) for v in t.target_point],
                "box_center": [float(v) for v in t.box.center],
            }
            for t in targets
        ],
    }


def write_task_file(path, scene_id: str, set_id: int, targets: list[NavTarget]) -> None:
    Path(path).write_text(
        json.dumps(task_payload(scene_id, set_id, targets), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_episode_record(record: EpisodeRecord, directory) -> None:
    """Episode directory: task.json, trajectory.jsonl, frames/, prompts.json, quality.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_task_file(directory / "task.json", record.scene_id, record.set_id, record.targets)
    write_trajectory_jsonl(record.trajectory, directory / "trajectory.jsonl")
    frames_dir = directory / "frames"
    frames_dir.mkdir(exist_ok=True)
    (frames_dir / "index.json").write_text(
        json.dumps(
            {
                "frame_count": len(record.trajectory),
                "sampled_indices": record.sampled_frame_indices,
                "frames": record.frames,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    (directory / "prompts.json").write_text(
        json.dumps([{"style": p.style, "text": p.text} for p in record.prompts], indent=2) + "\n",
        encoding="utf-8",
    )
    (directory / "quality.json").write_text(
        json.dumps({"accepted": record.quality.accepted, "reason": record.quality.reason}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
