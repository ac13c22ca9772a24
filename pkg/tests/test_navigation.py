from __future__ import annotations

import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import make_grid, make_scene
from oracles import visible_oracle
from skyforge.annotate import Box3D, CandidateSet
from skyforge.cameras import CameraIntrinsics
from skyforge.clients import MockLanguageClient
from skyforge.navigation import (
    EpisodeAborted,
    NavConfig,
    NavTarget,
    PromptVariant,
    approach_point,
    generate_target_sets,
    position_valid,
    run_episode,
    sample_frames,
    task_payload,
    visible,
    waypoint_safe,
    write_episode_record,
)
from skyforge.planning import PlannerLimits, ReferencePlanner, path_length


def box(center, he=(0.3, 0.3, 0.3), label="crate", yaw=0.0):
    return Box3D(label=label, center=np.asarray(center, float), half_extents=np.asarray(he, float), yaw=yaw)


SMALL_INTR = CameraIntrinsics.from_fov(8, 8, 90.0)


def language_only_clients(**kwargs):
    return SimpleNamespace(language=MockLanguageClient(**kwargs))


class TestPositionValid:
    def test_center_invalid(self):
        assert not position_valid([0, 0, 0], box([0, 0, 0]))

    def test_far_away_valid(self):
        assert position_valid([100, 0, 0], box([0, 0, 0]))

    def test_on_face_counts_as_inside(self):
        assert not position_valid([0.3, 0.0, 0.0], box([0, 0, 0], he=(0.3, 0.3, 0.3)))

    def test_respects_yaw(self):
        b = box([0, 0, 0], he=(1.0, 0.2, 0.2), yaw=math.pi / 2)  # long axis now along y
        assert position_valid([0.8, 0.0, 0.0], b)
        assert not position_valid([0.0, 0.8, 0.0], b)


class TestVisible:
    def test_empty_grid_visible(self):
        grid = make_grid(np.zeros((20, 20, 8), bool))
        assert visible(grid, [0.5, 0.5, 0.4], box([1.5, 1.5, 0.4]), 0.2)

    def test_midpoint_occluder_blocks(self):
        raw = np.zeros((40, 40, 8), bool)
        grid = make_grid(raw)
        drone = np.array([0.55, 0.55, 0.35])
        target = box([3.55, 0.55, 0.35])
        raw[tuple(grid.world_to_index([2.05, 0.65, 0.35]))] = True
        grid = make_grid(raw)
        assert not visible(grid, drone, target, 0.2)
        assert visible_oracle(grid, drone, target, 0.2) is False

    def test_occluder_beyond_box_ignored(self):
        raw = np.zeros((60, 40, 8), bool)
        grid = make_grid(raw)
        drone = np.array([0.55, 0.55, 0.35])
        target = box([3.55, 0.55, 0.35])
        raw[tuple(grid.world_to_index([4.55, 0.55, 0.35]))] = True  # past the box
        grid = make_grid(raw)
        assert visible(grid, drone, target, 0.2)
        assert visible_oracle(grid, drone, target, 0.2) is True

    def test_agrees_with_dense_oracle_random(self):
        rng = np.random.default_rng(55)
        for _ in range(60):
            raw = rng.random((10, 10, 6)) < 0.06
            grid = make_grid(raw)
            drone = rng.uniform([0.05, 0.05, 0.05], [0.95, 0.95, 0.55])
            target = box(rng.uniform([0.1, 0.1, 0.1], [0.9, 0.9, 0.5]),
                         he=rng.uniform(0.05, 0.2, 3), yaw=rng.uniform(-3, 3))
            if not position_valid(drone, target):
                continue
            radius = float(rng.uniform(0.05, 0.3))
            assert visible(grid, drone, target, radius) == visible_oracle(grid, drone, target, radius)


class TestWaypointSafe:
    def test_empty_grid(self):
        assert waypoint_safe(make_grid(np.zeros((5, 5, 5), bool)), [0.2, 0.2, 0.2], 0.3)

    def test_occupied_inside_region(self):
        raw = np.zeros((10, 10, 10), bool)
        grid = make_grid(raw)
        point = grid.index_to_world([5, 5, 5])
        raw[5, 6, 5] = True  # 0.1 m away
        grid = make_grid(raw)
        assert not waypoint_safe(grid, point, 0.3)

    def test_occupied_outside_region(self):
        raw = np.zeros((12, 12, 12), bool)
        grid = make_grid(raw)
        point = grid.index_to_world([5, 5, 5])
        raw[5, 10, 5] = True  # 0.5 m away
        grid = make_grid(raw)
        assert waypoint_safe(grid, point, 0.3)


class TestApproachPoint:
    def test_hand_computed_offset(self):
        b = box([0, 0, 0], he=(1.0, 1.0, 1.0))
        point = approach_point(b, [10.0, 0.0, 0.0], 0.5)
        np.testing.assert_allclose(point, [math.sqrt(3) + 0.5, 0.0, 0.0], atol=1e-12)

    def test_capped_at_from_position(self):
        b = box([0, 0, 0], he=(1.0, 1.0, 1.0))
        start = np.array([1.9, 0.0, 0.0])  # closer than sphere radius + clearance
        np.testing.assert_allclose(approach_point(b, start, 0.5), start)

    def test_always_outside_box(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            b = box(rng.uniform(-2, 2, 3), he=rng.uniform(0.1, 0.8, 3), yaw=rng.uniform(-3, 3))
            start = b.center + rng.uniform(1.5, 6.0) * _random_unit(rng)
            point = approach_point(b, start, 0.5)
            assert position_valid(point, b)

    def test_start_inside_raises(self):
        with pytest.raises(ValueError, match="start inside target"):
            approach_point(box([0, 0, 0], he=(1, 1, 1)), [0.2, 0.0, 0.0], 0.5)


def _random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestGenerateTargetSets:
    def empty_grid(self):
        return make_grid(np.zeros((30, 140, 30), bool), origin=(-1.5, -1.5, -1.5))

    def test_single_eligible_object(self):
        scene = make_scene(np.zeros((0, 3)))
        grid = self.empty_grid()
        annotations = CandidateSet(boxes=[box([0, 5, 0])], scene_center=np.zeros(3))
        config = NavConfig(n_sets=1, targets_per_set=1, seed=3)
        result = generate_target_sets(scene, grid, annotations, config)
        assert len(result.sets) == 1
        target = result.sets[0].targets[0]
        travel = float(np.linalg.norm(target.target_point - target.from_position))
        assert 2.0 <= travel <= 10.0
        assert not result.sets[0].partial

    def test_too_close_rejected_as_distance(self):
        scene = make_scene(np.zeros((0, 3)))
        grid = self.empty_grid()
        annotations = CandidateSet(boxes=[box([0, 1.0, 0])], scene_center=np.zeros(3))
        result = generate_target_sets(scene, grid, annotations, NavConfig(n_sets=1, targets_per_set=1, seed=3))
        assert result.sets == []
        assert result.rejections["distance"] == 1

    def test_object_behind_wall_rejected_as_occluded(self):
        raw = np.zeros((40, 40, 12), bool)
        raw[:, 26, :] = True  # dividing wall at y ~ 0.6, start room below it
        grid = make_grid(raw, origin=(-2.0, -2.0, -0.6))
        scene = make_scene(np.zeros((0, 3)))
        annotations = CandidateSet(boxes=[box([0, 1.5, 0])], scene_center=np.zeros(3))  # other room
        result = generate_target_sets(scene, grid, annotations, NavConfig(n_sets=1, targets_per_set=1, seed=3))
        assert result.sets == []
        assert result.rejections["occluded"] == 1

    def test_chained_targets_update_position(self):
        scene = make_scene(np.zeros((0, 3)))
        grid = self.empty_grid()
        boxes = [box([0, 4, 0], label="a"), box([0, 8, 0], label="b")]
        result = generate_target_sets(scene, grid, CandidateSet(boxes=boxes), NavConfig(n_sets=1, targets_per_set=2, seed=1))
        targets = result.sets[0].targets
        assert len(targets) == 2
        np.testing.assert_allclose(targets[1].from_position, targets[0].target_point)
        for t in targets:
            assert 2.0 <= np.linalg.norm(t.target_point - t.from_position) <= 10.0

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        scene = make_scene(np.zeros((0, 3)))
        grid = self.empty_grid()
        boxes = [box([rng.uniform(-1, 1), rng.uniform(3, 9), 0], label=f"o{i}") for i in range(12)]
        cfg = NavConfig(n_sets=3, targets_per_set=3, seed=99)
        a = generate_target_sets(scene, grid, CandidateSet(boxes=boxes), cfg)
        b = generate_target_sets(scene, grid, CandidateSet(boxes=boxes), cfg)
        pay_a = [task_payload("s", ts.set_id, ts.targets) for ts in a.sets]
        pay_b = [task_payload("s", ts.set_id, ts.targets) for ts in b.sets]
        assert json.dumps(pay_a, sort_keys=True) == json.dumps(pay_b, sort_keys=True)

    def test_emitted_targets_satisfy_all_criteria(self):
        rng = np.random.default_rng(14)
        raw = rng.random((50, 50, 16)) < 0.01
        grid = make_grid(raw, origin=(-2.5, -2.5, -0.8), inflation_radius=0.2)
        scene = make_scene(np.zeros((0, 3)))
        boxes = [box(np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.5, 0.5)]),
                     he=rng.uniform(0.1, 0.3, 3), label=f"o{i}") for i in range(20)]
        cfg = NavConfig(n_sets=2, targets_per_set=3, seed=5, d_min=0.5, d_max=6.0,
                        cylinder_radius=0.15, safety_radius=0.2, approach_clearance=0.3)
        result = generate_target_sets(scene, grid, CandidateSet(boxes=boxes), cfg)
        for ts in result.sets:
            for t in ts.targets:
                assert position_valid(t.from_position, t.box)
                assert visible(grid, t.from_position, t.box, cfg.cylinder_radius)
                assert waypoint_safe(grid, t.target_point, cfg.safety_radius)
                assert grid.is_free(t.target_point)
                assert cfg.d_min <= np.linalg.norm(t.target_point - t.from_position) <= cfg.d_max

    def test_nav_config_validation(self):
        with pytest.raises(ValueError):
            NavConfig(d_min=5.0, d_max=2.0)
        with pytest.raises(ValueError):
            NavConfig(distance_mode="warp")


class TestSampleFrames:
    @pytest.mark.parametrize("count,expected", [(90, [0, 30, 60]), (30, [0]), (0, []), (91, [0, 30, 60, 90])])
    def test_multiples_of_thirty(self, count, expected):
        assert sample_frames(count) == expected

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            sample_frames(-1)


class TestRunEpisode:
    def straight_setup(self):
        grid = make_grid(np.zeros((16, 140, 16), bool), origin=(-0.8, -0.8, -0.8))
        scene = make_scene(np.zeros((0, 3)))
        target = NavTarget(box=box([0, 5.8, 0]), target_point=np.array([0.0, 5.0, 0.0]),
                           from_position=np.zeros(3))
        planner = ReferencePlanner(limits=PlannerLimits())
        return scene, grid, [target], planner

    def test_straight_leg_record(self):
        scene, grid, targets, planner = self.straight_setup()
        record = run_episode(scene, grid, targets, planner, language_only_clients(),
                             scene_id="s0", intrinsics=SMALL_INTR)
        assert np.all(np.diff(record.trajectory.times) > 0)
        assert path_length(record.trajectory.positions) == pytest.approx(5.0, abs=0.25)
        assert record.quality.accepted
        assert all(i % 30 == 0 for i in record.sampled_frame_indices)
        assert 1 <= len(record.prompts) <= 3

    def test_rejecting_client_flags_episode(self):
        scene, grid, targets, planner = self.straight_setup()
        clients = language_only_clients(force_reject_reason="rendering artifacts")
        record = run_episode(scene, grid, targets, planner, clients, intrinsics=SMALL_INTR)
        assert not record.quality.accepted
        assert record.quality.reason == "rendering artifacts"

    def test_five_targets_one_continuous_record(self):
        grid = make_grid(np.zeros((16, 130, 16), bool), origin=(-0.8, -0.8, -0.8))
        scene = make_scene(np.zeros((0, 3)))
        targets = []
        prev = np.zeros(3)
        for k in range(1, 6):
            point = np.array([0.0, 2.2 * k, 0.0])
            targets.append(NavTarget(box=box(point + [0, 0.8, 0], label=f"o{k}"),
                                     target_point=point, from_position=prev))
            prev = point
        planner = ReferencePlanner(limits=PlannerLimits())
        record = run_episode(scene, grid, targets, planner, language_only_clients(), intrinsics=SMALL_INTR)
        assert np.all(np.diff(record.trajectory.times) > 0)
        assert path_length(record.trajectory.positions) == pytest.approx(11.0, abs=0.5)
        assert len(record.target_prompts) == 5

    def test_unreachable_leg_aborts_with_index(self):
        raw = np.zeros((16, 60, 16), bool)
        raw[:, 30, :] = True
        grid = make_grid(raw, origin=(-0.8, -0.8, -0.8))
        scene = make_scene(np.zeros((0, 3)))
        target = NavTarget(box=box([0, 4.5, 0]), target_point=np.array([0.0, 4.0, 0.0]),
                           from_position=np.zeros(3))
        planner = ReferencePlanner(limits=PlannerLimits())
        with pytest.raises(EpisodeAborted) as err:
            run_episode(scene, grid, [target], planner, language_only_clients(), intrinsics=SMALL_INTR)
        assert err.value.leg_index == 0

    def test_empty_targets_rejected(self):
        scene, grid, _, planner = self.straight_setup()
        with pytest.raises(ValueError):
            run_episode(scene, grid, [], planner, language_only_clients())


def test_write_episode_record(tmp_path):
    grid = make_grid(np.zeros((16, 140, 16), bool), origin=(-0.8, -0.8, -0.8))
    scene = make_scene(np.zeros((0, 3)))
    target = NavTarget(box=box([0, 5.8, 0], label="sofa"), target_point=np.array([0.0, 5.0, 0.0]),
                       from_position=np.zeros(3))
    planner = ReferencePlanner(limits=PlannerLimits())
    record = run_episode(scene, grid, [target], planner, language_only_clients(),
                         scene_id="scene_test", set_id=2, intrinsics=SMALL_INTR)
    out = tmp_path / "episode"
    write_episode_record(record, out)

    task = json.loads((out / "task.json").read_text())
    assert task == {
        "scene_id": "scene_test",
        "set_id": 2,
        "start": [0.0, 0.0, 0.0],
        "targets": [{"label": "sofa", "target_point": [0.0, 5.0, 0.0], "box_center": [0.0, 5.8, 0.0]}],
    }
    lines = (out / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == len(record.trajectory)
    sample = json.loads(lines[0])
    assert set(sample) == {"t", "position", "velocity", "yaw", "pitch"}
    frames = json.loads((out / "frames" / "index.json").read_text())
    assert frames["sampled_indices"] == record.sampled_frame_indices
    prompts = json.loads((out / "prompts.json").read_text())
    assert all(set(p) == {"style", "text"} for p in prompts)
    quality = json.loads((out / "quality.json").read_text())
    assert quality == {"accepted": True, "reason": "ok"}


def test_prompt_variant_style_validation():
    with pytest.raises(ValueError):
        PromptVariant("poetic", "Fly to the thing.")
