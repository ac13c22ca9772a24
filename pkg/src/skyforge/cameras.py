"""Camera pose generation: inward-facing orbit sweeps and path-following rigs.

Conventions (used package-wide):
  - World up axis: +z.
  - Yaw is measured from +y rotating toward +x; pitch is elevation from the
    horizontal plane. Roll is always zero.
  - A viewing direction is d(yaw, pitch) = [sin(yaw)cos(pitch),
    cos(yaw)cos(pitch), sin(pitch)].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def direction_from_angles(yaw: float, pitch: float) -> np.ndarray:
    """Unit viewing direction for a yaw/pitch pair (yaw from +y, z-up)."""
    cp = math.cos(pitch)
    return np.array([math.sin(yaw) * cp, math.cos(yaw) * cp, math.sin(pitch)])


@dataclass(frozen=True)
class CameraPose:
    """A camera position with its viewing direction.

    direction is always derived from (yaw, pitch); construct via from_angles
    to keep the two consistent.
    """

    position: np.ndarray
    direction: np.ndarray
    yaw: float
    pitch: float

    @classmethod
    def from_angles(cls, position, yaw: float, pitch: float) -> "CameraPose":
        pos = np.asarray(position, dtype=float)
        return cls(position=pos, direction=direction_from_angles(yaw, pitch), yaw=yaw, pitch=pitch)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Pixel (u, v) has its center at (u + 0.5, v + 0.5)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("intrinsics require positive focal lengths and resolution")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float = 90.0) -> "CameraIntrinsics":
        f = 0.5 * width / math.tan(0.5 * math.radians(fov_deg))
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


@dataclass(frozen=True)
class OrbitConfig:
    """Inward-facing orbit sweep parameters.

    yaw_step must divide a full turn; defaults give 5 elevations x 12 yaws.
    """

    r_orb: float = 0.1
    pitch_levels: Sequence[float] = field(
        default_factory=lambda: tuple(math.radians(a) for a in (-60.0, -30.0, 0.0, 30.0, 60.0))
    )
    yaw_step: float = math.radians(30.0)

    def __post_init__(self):
        if self.r_orb <= 0:
            raise ValueError("r_orb must be positive")
        n = TWO_PI / self.yaw_step
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError("yaw_step must divide 2*pi")

    @property
    def yaw_count(self) -> int:
        return int(round(TWO_PI / self.yaw_step))


def orbit_pose(center, yaw: float, pitch: float, r_orb: float) -> CameraPose:
    """Pose on the orbit sphere: position = center - r_orb * d, looking through center."""
    if r_orb <= 0:
        raise ValueError("r_orb must be positive")
    c = np.asarray(center, dtype=float)
    d = direction_from_angles(yaw, pitch)
    return CameraPose(position=c - r_orb * d, direction=d, yaw=yaw, pitch=pitch)


def orbit_sweep(config: OrbitConfig, center) -> list[CameraPose]:
    """Full yaw sweep at every pitch level, pitch-major then yaw-ascending."""
    poses = []
    for pitch in config.pitch_levels:
        for k in range(config.yaw_count):
            poses.append(orbit_pose(center, k * config.yaw_step, pitch, config.r_orb))
    return poses


def four_view_rig(position, heading_yaw: float) -> list[CameraPose]:
    """Front/left/right/back poses at one position, pitch 0.

    Left is heading + pi/2 (counterclockwise seen from above in the z-up,
    yaw-from-+y frame).
    """
    offsets = (0.0, math.pi / 2.0, -math.pi / 2.0, math.pi)
    return [CameraPose.from_angles(position, heading_yaw + off, 0.0) for off in offsets]


def camera_basis(pose: CameraPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (forward, right, up) for a pose; right-handed, image up ~ world up.

    Falls back to the yaw direction for the degenerate straight-up/down case.
    """
    forward = pose.direction / np.linalg.norm(pose.direction)
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, world_up)
    n = np.linalg.norm(right)
    if n < 1e-9:
        right = np.array([math.cos(pose.yaw), -math.sin(pose.yaw), 0.0])
    else:
        right = right / n
    up = np.cross(right, forward)
    return forward, right, up


def path_headings(path, window: int = 5) -> list[float]:
    """Yaw headings along a waypoint path from window-averaged forward differences.

    The centered window (odd size) is clamped at the path ends. A single
    waypoint gets heading 0; a degenerate averaged tangent reuses the previous
    heading.
    """
    pts = np.asarray(getattr(path, "waypoints", path), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("path must be (K, 3) waypoints")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    k_pts = pts.shape[0]
    if k_pts == 1:
        return [0.0]
    diffs = np.diff(pts, axis=0)  # (K-1, 3)
    half = (window - 1) // 2
    headings: list[float] = []
    prev = 0.0
    for k in range(k_pts):
        lo = max(0, k - half)
        hi = min(diffs.shape[0], k + half + 1)
        if lo >= hi:  # only possible at the last waypoint with window 1
            lo, hi = diffs.shape[0] - 1, diffs.shape[0]
        avg = diffs[lo:hi].mean(axis=0)
        if math.hypot(avg[0], avg[1]) < 1e-12:
            headings.append(prev)
            continue
        prev = math.atan2(avg[0], avg[1])
        headings.append(prev)
    return headings


def write_poses_jsonl(poses: Sequence[CameraPose], path) -> None:
    """One pose per line: {position: [x, y, z], yaw, pitch}; SI units, radians."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in poses:
            fh.write(json.dumps({"position": [float(v) for v in p.position], "yaw": float(p.yaw), "pitch": float(p.pitch)}))
            fh.write("\n")
