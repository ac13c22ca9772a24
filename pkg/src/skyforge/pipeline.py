"""End-to-end orchestration: per-scene stage chain, seeded batches, stats, audit.

A scene run owns one output directory and a manifest recording stage status,
parameters and wall time; any stage failure is recorded and the remaining
stages are skipped without raising, so batches keep going. Scene-level
parallelism only: workers receive (config, seed) and write to disjoint
directories, which keeps outputs byte-identical between serial and parallel
runs (timestamps aside).
"""

from __future__ import annotations

import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .annotate import CandidateSet, fuse_detections, read_annotation, select_targets, write_annotation
from .cameras import four_view_rig, orbit_sweep, path_headings
from .clients import ClientBundle, DetectionRequest, clients_from_settings, default_taxonomy, load_taxonomy, make_scene_spec
from .config import PipelineConfig
from .navigation import (
    EpisodeAborted,
    approach_point,
    generate_target_sets,
    position_valid,
    run_episode,
    visible,
    waypoint_safe,
    write_episode_record,
    write_task_file,
)
from .planning import PlanningError, ReferencePlanner, astar, laplacian_smooth, path_length, read_trajectory_jsonl
from .splat import build_occupancy, load_scene, query_depth, save_scene

logger = logging.getLogger(__name__)

TIMESTAMP_KEYS = ("started_at", "finished_at", "wall_time_s")


class _StageFailed(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def scene_identifier(seed: int) -> str:
    return f"scene_{seed:010d}"


def _load_taxonomy(config: PipelineConfig):
    if config.taxonomy_path:
        return load_taxonomy(config.taxonomy_path)
    return default_taxonomy()


def run_scene(config: PipelineConfig, scene_seed: int, clients: ClientBundle | None = None) -> dict:
    """Run the three-stage pipeline for one scene; returns the manifest.

    Stage failures are captured in the manifest (status "failed") instead of
    raising. Outputs land under {output_root}/{scene_id}/.
    """
    scene_id = scene_identifier(scene_seed)
    out_dir = Path(config.output_root) / scene_id
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest: dict = {
        "scene_id": scene_id,
        "seed": scene_seed,
        "status": "ok",
        "started_at": _now(),
        "params": {
            "grid": asdict(config.grid),
            "nav": asdict(config.nav),
            "selection": asdict(config.selection),
            "planner": asdict(config.planner),
            "orbit": asdict(config.orbit),
            "exploration": asdict(config.exploration),
            "render": asdict(config.render),
        },
        "stages": [],
    }
    t_start = time.perf_counter()

    def stage(name, fn):
        entry = {"name": name, "status": "ok"}
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:  # recorded, not propagated
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            manifest["status"] = "failed"
            manifest["failed_stage"] = name
            raise _StageFailed() from exc
        finally:
            entry["wall_time_s"] = time.perf_counter() - t0
            manifest["stages"].append(entry)
        return entry, result

    try:
        _run_scene_stages(config, scene_seed, clients, out_dir, manifest, stage)
    except _StageFailed:
        logger.warning("scene %s failed at stage %s", scene_id, manifest.get("failed_stage"))

    manifest["finished_at"] = _now()
    manifest["wall_time_s"] = time.perf_counter() - t_start
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def _run_scene_stages(config, scene_seed, clients, out_dir, manifest, stage):
    taxonomy = _load_taxonomy(config)
    _, spec = stage("scene_spec", lambda: make_scene_spec(taxonomy, scene_seed))
    manifest["category"] = spec.category
    manifest["subcategory"] = spec.subcategory
    manifest["description"] = spec.description

    _, bundle = stage(
        "clients",
        lambda: clients if clients is not None else clients_from_settings(config.clients),
    )

    def world_stage():
        generated = bundle.world.generate(spec)
        # round-trip through the PLY file so the audit, which re-reads it,
        # sees bit-identical float32 geometry
        save_scene(generated, out_dir / "scene.ply")
        return load_scene(out_dir / "scene.ply")

    _, scene = stage("world_generation", world_stage)
    manifest["primitive_count"] = len(scene)
    manifest["center"] = [float(v) for v in scene.center]

    _, grid = stage("occupancy", lambda: build_occupancy(
        scene, config.grid.resolution, config.grid.opacity_threshold, config.grid.inflation_radius,
    ))

    intrinsics = config.render.to_intrinsics()
    frames: list[tuple] = []
    frame_counter = [0]

    def observe(pose):
        depth = query_depth(scene, pose, intrinsics)
        request = DetectionRequest(depth=depth, pose=pose, intrinsics=intrinsics, frame_id=frame_counter[0])
        frame_counter[0] += 1
        response = bundle.detector.detect(request)
        frames.append((pose, response.boxes))

    def orbit_stage():
        for pose in orbit_sweep(config.orbit.to_orbit(), scene.center):
            observe(pose)
        return sum(len(b) for _, b in frames)

    entry, _ = stage("orbit_detection", orbit_stage)
    entry["frames"] = frame_counter[0]

    def selection_stage():
        candidates = CandidateSet(boxes=[b for _, bs in frames for b in bs], scene_center=scene.center)
        return select_targets(candidates, config.selection.to_params())

    entry, selected = stage("target_selection", selection_stage)
    entry["selected"] = len(selected)

    def exploration_stage():
        explored, skipped = 0, 0
        stride = max(1, config.exploration.rig_stride)
        for box in selected:
            try:
                goal = approach_point(box, scene.center, config.exploration.approach_clearance)
                raw = astar(grid, scene.center, goal)
            except (PlanningError, ValueError) as exc:
                logger.info("exploration target '%s' skipped: %s", box.label, exc)
                skipped += 1
                continue
            smooth = laplacian_smooth(raw, grid, config.planner.smooth_alpha, config.planner.smooth_iterations)
            headings = path_headings(smooth, config.planner.heading_window)
            for k in range(0, len(smooth), stride):
                for pose in four_view_rig(smooth.waypoints[k], headings[k]):
                    observe(pose)
            explored += 1
        return explored, skipped

    entry, (explored, skipped) = stage("exploration", exploration_stage)
    entry["explored"] = explored
    entry["skipped"] = skipped

    def fusion_stage():
        fused = fuse_detections(
            frames,
            iou_threshold=config.selection.fusion_iou_threshold,
            d_th1=config.selection.d_th1,
            scene_center=scene.center,
        )
        write_annotation(out_dir / "annotation.json", manifest["scene_id"], fused.boxes)
        return fused

    entry, annotations = stage("fusion", fusion_stage)
    entry["boxes"] = len(annotations)

    def target_sets_stage():
        generation = generate_target_sets(scene, grid, annotations, config.nav.to_nav_config(seed=scene_seed))
        tasks_dir = out_dir / "tasks"
        tasks_dir.mkdir(exist_ok=True)
        for ts in generation.sets:
            write_task_file(tasks_dir / f"task_{ts.set_id:03d}.json", manifest["scene_id"], ts.set_id, ts.targets)
        return generation

    entry, generation = stage("target_sets", target_sets_stage)
    entry["sets"] = len(generation.sets)
    entry["rejections"] = generation.rejections
    manifest["task_files"] = [f"tasks/task_{ts.set_id:03d}.json" for ts in generation.sets]

    def episodes_stage():
        planner = ReferencePlanner(
            limits=config.planner.to_limits(),
            smooth_alpha=config.planner.smooth_alpha,
            smooth_iterations=config.planner.smooth_iterations,
            heading_window=config.planner.heading_window,
        )
        results = []
        for ts in generation.sets:
            episode_dir = out_dir / "episodes" / f"set_{ts.set_id:03d}"
            info = {"set_id": ts.set_id, "targets": len(ts.targets), "partial": ts.partial,
                    "directory": f"episodes/set_{ts.set_id:03d}"}
            try:
                record = run_episode(
                    scene, grid, ts.targets, planner, bundle,
                    scene_id=manifest["scene_id"], set_id=ts.set_id,
                    intrinsics=intrinsics, context_boxes=annotations.boxes,
                )
            except EpisodeAborted as exc:
                info.update(status="aborted", reason=str(exc), leg_index=exc.leg_index)
                results.append(info)
                continue
            write_episode_record(record, episode_dir)
            info.update(
                status="archived" if record.quality.accepted else "rejected",
                reason=record.quality.reason,
                trajectory_length_m=path_length(record.trajectory.positions),
                frame_count=len(record.trajectory),
            )
            results.append(info)
        return results

    entry, episodes = stage("episodes", episodes_stage)
    manifest["episodes"] = episodes
    manifest["archived_episodes"] = sum(1 for e in episodes if e["status"] == "archived")


def _scene_worker(payload: tuple) -> dict:
    config_dict, seed = payload
    config = PipelineConfig.from_dict(config_dict)
    try:
        manifest = run_scene(config, seed)
        return {"scene_id": manifest["scene_id"], "seed": seed, "status": manifest["status"],
                "failed_stage": manifest.get("failed_stage")}
    except Exception as exc:  # worker crash isolation: report, never propagate
        return {"scene_id": scene_identifier(seed), "seed": seed, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}"}


def run_batch(config: PipelineConfig, n_scenes: int) -> dict:
    """Run n_scenes pipelines with seeds master_seed + i across workers.

    One scene failing never aborts the batch; the aggregate manifest is
    written to {output_root}/batch_manifest.json and returned.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    started = _now()
    t0 = time.perf_counter()
    seeds = [config.master_seed + i for i in range(n_scenes)]
    workers = max(1, min(config.workers, n_scenes))

    if workers == 1:
        results = [_scene_worker((config.to_dict(), seed)) for seed in seeds]
    else:
        # spawn: the batch may run inside a threaded service worker, where
        # forking is not safe
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_scene_worker, [(config.to_dict(), seed) for seed in seeds]))

    manifest = {
        "n_scenes": n_scenes,
        "master_seed": config.master_seed,
        "workers": workers,
        "succeeded": sum(1 for r in results if r["status"] == "ok"),
        "failed": sum(1 for r in results if r["status"] != "ok"),
        "scenes": results,
        "started_at": started,
        "finished_at": _now(),
        "wall_time_s": time.perf_counter() - t0,
    }
    root = Path(config.output_root)
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "batch_manifest.json", manifest)
    return manifest


@dataclass
class DatasetStats:
    scene_count: int
    trajectory_count: int
    length_mean: float | None
    length_median: float | None
    category_histogram: dict[str, int]
    unique_label_count: int
    object_count_histogram: dict[int, int]

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["object_count_histogram"] = {str(k): v for k, v in self.object_count_histogram.items()}
        return payload


def _scene_dirs(output_root) -> list[Path]:
    root = Path(output_root)
    if not root.is_dir():
        return []
    return sorted(d for d in root.iterdir() if d.is_dir() and (d / "manifest.json").exists())


def compute_stats(output_root) -> DatasetStats:
    """Scan scene manifests and archived episodes under a dataset root.

    Median is the lower-middle element for even counts, per the dataset
    convention.
    """
    dirs = _scene_dirs(output_root)
    if not dirs:
        raise ValueError("no scenes")

    categories: dict[str, int] = {}
    labels: set[str] = set()
    object_hist: dict[int, int] = {}
    lengths: list[float] = []

    for scene_dir in dirs:
        manifest = json.loads((scene_dir / "manifest.json").read_text(encoding="utf-8"))
        category = manifest.get("category", "unknown")
        categories[category] = categories.get(category, 0) + 1
        annotation = scene_dir / "annotation.json"
        if annotation.exists():
            _, boxes = read_annotation(annotation)
            labels.update(b.label for b in boxes)
            object_hist[len(boxes)] = object_hist.get(len(boxes), 0) + 1
        for episode in manifest.get("episodes", []):
            if episode.get("status") != "archived":
                continue
            traj_path = scene_dir / episode["directory"] / "trajectory.jsonl"
            if not traj_path.exists():
                continue
            trajectory = read_trajectory_jsonl(traj_path)
            lengths.append(path_length(trajectory.positions))

    if lengths:
        ordered = sorted(lengths)
        mean = float(np.mean(ordered))
        median = float(ordered[(len(ordered) - 1) // 2])
    else:
        mean = median = None
    return DatasetStats(
        scene_count=len(dirs),
        trajectory_count=len(lengths),
        length_mean=mean,
        length_median=median,
        category_histogram=categories,
        unique_label_count=len(labels),
        object_count_histogram=object_hist,
    )


def audit_root(output_root) -> dict:
    """Re-verify every emitted target against the four eligibility criteria.

    Rebuilds each scene's occupancy grid from the stored PLY and manifest
    parameters, then replays the checks with the recorded chain of positions.
    Returns {scenes, targets_checked, failures: [...], ok}.
    """
    failures: list[dict] = []
    targets_checked = 0
    dirs = _scene_dirs(output_root)
    if not dirs:
        raise ValueError("no scenes")

    for scene_dir in dirs:
        manifest = json.loads((scene_dir / "manifest.json").read_text(encoding="utf-8"))
        ply = scene_dir / "scene.ply"
        annotation = scene_dir / "annotation.json"
        tasks = sorted(scene_dir.glob("tasks/task_*.json"))
        if not ply.exists() or not annotation.exists() or not tasks:
            continue
        params = manifest["params"]
        nav = params["nav"]
        scene = load_scene(ply, center_override=manifest.get("center"))
        grid = build_occupancy(
            scene,
            params["grid"]["resolution"],
            params["grid"]["opacity_threshold"],
            params["grid"]["inflation_radius"],
        )
        _, boxes = read_annotation(annotation)

        def find_box(label, center):
            center = np.asarray(center, dtype=float)
            for b in boxes:
                if b.label == label and float(np.linalg.norm(b.center - center)) < 1e-9:
                    return b
            return None

        for task_path in tasks:
            task = json.loads(task_path.read_text(encoding="utf-8"))
            position = np.asarray(task["start"], dtype=float)
            for index, target in enumerate(task["targets"]):
                targets_checked += 1
                point = np.asarray(target["target_point"], dtype=float)
                box = find_box(target["label"], target["box_center"])

                def fail(criterion):
                    failures.append({
                        "scene_id": manifest["scene_id"], "set_id": task["set_id"],
                        "index": index, "criterion": criterion,
                    })

                if box is None:
                    fail("annotation_lookup")
                elif not position_valid(position, box):
                    fail("position")
                elif not visible(grid, position, box, nav["cylinder_radius"]):
                    fail("occluded")
                elif not (waypoint_safe(grid, point, nav["safety_radius"]) and grid.is_free(point)):
                    fail("unsafe")
                else:
                    if nav.get("distance_mode") == "path_length":
                        try:
                            travel = path_length(astar(grid, position, point))
                        except PlanningError:
                            travel = float("inf")
                    else:
                        travel = float(np.linalg.norm(point - position))
                    if not nav["d_min"] <= travel <= nav["d_max"]:
                        fail("distance")
                position = point

    return {
        "scenes": len(dirs),
        "targets_checked": targets_checked,
        "failures": failures,
        "ok": not failures,
    }
