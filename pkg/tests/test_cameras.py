from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skyforge.cameras import (
    CameraPose,
    OrbitConfig,
    direction_from_angles,
    four_view_rig,
    orbit_pose,
    orbit_sweep,
    path_headings,
    write_poses_jsonl,
)


class TestDirection:
    @pytest.mark.parametrize("yaw,pitch,expected", [
        (0.0, 0.0, (0.0, 1.0, 0.0)),
        (math.pi / 2, 0.0, (1.0, 0.0, 0.0)),
        (0.0, math.pi / 2, (0.0, 0.0, 1.0)),
    ])
    def test_axis_cases(self, yaw, pitch, expected):
        np.testing.assert_allclose(direction_from_angles(yaw, pitch), expected, atol=1e-12)

    @given(st.floats(-10, 10), st.floats(-math.pi / 2, math.pi / 2))
    @settings(max_examples=200, deadline=None)
    def test_unit_norm_and_periodicity(self, yaw, pitch):
        d = direction_from_angles(yaw, pitch)
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-9)
        d2 = direction_from_angles(yaw + 2 * math.pi, pitch)
        np.testing.assert_allclose(d, d2, atol=1e-9)


class TestOrbitPose:
    def test_formula_at_zero_angles(self):
        pose = orbit_pose([0, 0, 0], yaw=0.0, pitch=0.0, r_orb=0.1)
        np.testing.assert_allclose(pose.position, [0.0, -0.1, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose.direction, [0.0, 1.0, 0.0], atol=1e-12)

    def test_position_plus_radius_direction_is_center(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            c = rng.uniform(-5, 5, 3)
            pose = orbit_pose(c, rng.uniform(-7, 7), rng.uniform(-1.5, 1.5), 0.1)
            np.testing.assert_allclose(pose.position + 0.1 * pose.direction, c, atol=1e-9)

    def test_yaw_pi_flips_y(self):
        pose = orbit_pose([1, 1, 1], yaw=math.pi, pitch=0.0, r_orb=0.1)
        np.testing.assert_allclose(pose.position, [1.0, 1.1, 1.0], atol=1e-12)


class TestOrbitSweep:
    def test_single_pitch_quarter_steps(self):
        cfg = OrbitConfig(r_orb=0.1, pitch_levels=(0.0,), yaw_step=math.pi / 2)
        poses = orbit_sweep(cfg, [0, 0, 0])
        assert [p.yaw for p in poses] == pytest.approx([0.0, math.pi / 2, math.pi, 3 * math.pi / 2])

    def test_count_is_pitches_times_yaws(self):
        cfg = OrbitConfig(pitch_levels=(-math.pi / 6, 0.0, math.pi / 6), yaw_step=math.pi / 6)
        poses = orbit_sweep(cfg, [0, 0, 0])
        assert len(poses) == 36
        # pitch-major ordering
        assert [p.pitch for p in poses[:12]] == [-math.pi / 6] * 12

    def test_inherited_identity(self):
        cfg = OrbitConfig()
        c = np.array([2.0, -1.0, 0.5])
        for pose in orbit_sweep(cfg, c):
            np.testing.assert_allclose(pose.position + cfg.r_orb * pose.direction, c, atol=1e-9)

    def test_yaw_step_must_divide_full_turn(self):
        with pytest.raises(ValueError, match="divide"):
            OrbitConfig(yaw_step=1.0)
        with pytest.raises(ValueError, match="r_orb"):
            OrbitConfig(r_orb=0.0)


class TestFourViewRig:
    def test_yaw_offsets_front_left_right_back(self):
        poses = four_view_rig([1, 2, 3], heading_yaw=0.0)
        assert [p.yaw for p in poses] == pytest.approx([0.0, math.pi / 2, -math.pi / 2, math.pi])

    def test_shared_position(self):
        poses = four_view_rig([1, 2, 3], heading_yaw=0.7)
        for p in poses:
            np.testing.assert_array_equal(p.position, [1, 2, 3])

    def test_front_back_antipodal(self):
        front, _, _, back = four_view_rig([0, 0, 0], heading_yaw=1.3)
        np.testing.assert_allclose(front.direction + back.direction, np.zeros(3), atol=1e-9)


class TestPathHeadings:
    def test_straight_paths(self):
        along_y = np.array([[0, k, 0] for k in range(6)], dtype=float)
        assert path_headings(along_y, 5) == pytest.approx([0.0] * 6)
        along_x = np.array([[k, 0, 0] for k in range(6)], dtype=float)
        assert path_headings(along_x, 5) == pytest.approx([math.pi / 2] * 6)

    def test_right_angle_corner_window3(self):
        # hand-traced: corner averages tangents (0,1,0) and (1,0,0) -> yaw pi/4
        path = np.array([[0, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        headings = path_headings(path, 3)
        assert headings[1] == pytest.approx(math.pi / 4)

    def test_single_waypoint(self):
        assert path_headings(np.zeros((1, 3)), 3) == [0.0]

    def test_shift_equivariant(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(-3, 3, (12, 3))
        shifted = pts + np.array([10.0, -4.0, 2.0])
        assert path_headings(pts, 5) == pytest.approx(path_headings(shifted, 5), abs=1e-12)

    def test_window_must_be_odd(self):
        with pytest.raises(ValueError):
            path_headings(np.zeros((3, 3)), 2)


def test_write_poses_jsonl(tmp_path):
    poses = [CameraPose.from_angles([1, 2, 3], 0.5, -0.2), CameraPose.from_angles([0, 0, 0], 0.0, 0.0)]
    out = tmp_path / "poses.jsonl"
    write_poses_jsonl(poses, out)
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines[0] == {"position": [1.0, 2.0, 3.0], "yaw": 0.5, "pitch": -0.2}
    assert len(lines) == 2
