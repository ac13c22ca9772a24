"""Labeled 3D box maps: distance-aware target selection, pruning, and fusion.

Selection promotes spatial diversity: candidates are visited farthest-first
from the scene center, accepted while beyond the outer distance threshold,
and each acceptance prunes still-active candidates that are within the inner
threshold of it or that lie in nearly the same horizontal direction. If
nothing beyond the outer threshold is accepted, the single farthest candidate
in the (inner, outer] band is returned instead.

Azimuths are horizontal-plane bearings of (x - c) measured from +y toward +x
(the package yaw convention); a box directly above/below the center has no
defined azimuth and is conservatively treated as sharing every direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Box3D:
    """A labeled, yaw-rotated 3D bounding box."""

    label: str
    center: np.ndarray
    half_extents: np.ndarray
    yaw: float = 0.0
    confidence: float = 1.0
    source_frame: int | str | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0):
            raise ValueError("half_extents must be strictly positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass
class CandidateSet:
    boxes: list[Box3D]
    scene_center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.scene_center = np.asarray(self.scene_center, dtype=float)

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass(frozen=True)
class SelectionParams:
    d_th1: float = 3.0
    d_th2: float = 4.0
    theta_th: float = math.radians(35.0)
    n_t: int = 5

    def __post_init__(self):
        if not 0 < self.d_th1 < self.d_th2:
            raise ValueError("thresholds must satisfy 0 < d_th1 < d_th2")
        if not 0 < self.theta_th < math.pi:
            raise ValueError("theta_th must be in (0, pi)")
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")


def to_box_frame(points, box: Box3D) -> np.ndarray:
    """Express points in the box's yaw-rotated frame about its center."""
    rel = np.atleast_2d(np.asarray(points, dtype=float)) - box.center
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(rel)
    out[:, 0] = c * rel[:, 0] - s * rel[:, 1]
    out[:, 1] = s * rel[:, 0] + c * rel[:, 1]
    out[:, 2] = rel[:, 2]
    return out


def box_contains(box: Box3D, points) -> np.ndarray:
    """Closed containment test; boundary points count as inside."""
    local = np.abs(to_box_frame(points, box))
    return np.all(local <= box.half_extents, axis=1)


def center_distance(box: Box3D, center) -> float:
    return float(np.linalg.norm(box.center - np.asarray(center, dtype=float)))


def _azimuth(offset: np.ndarray) -> float | None:
    if math.hypot(offset[0], offset[1]) < 1e-9:
        return None
    return math.atan2(offset[0], offset[1])


def azimuth_difference(box_a: Box3D, box_b: Box3D, center) -> float:
    """Absolute horizontal-bearing difference, wrapped into [0, pi].

    Degenerate horizontal offsets (a box straight above/below the center) are
    defined as difference 0 so they prune against everything.
    """
    c = np.asarray(center, dtype=float)
    az_a = _azimuth(box_a.center - c)
    az_b = _azimuth(box_b.center - c)
    if az_a is None or az_b is None:
        return 0.0
    return abs((az_a - az_b + math.pi) % (2.0 * math.pi) - math.pi)


def _sorted_candidates(candidates: CandidateSet) -> list[tuple[float, Box3D]]:
    c = candidates.scene_center
    entries = [(center_distance(b, c), b) for b in candidates.boxes]
    entries.sort(key=lambda e: (-e[0], tuple(e[1].center), e[1].label))
    return entries

def select_targets(candidates: CandidateSet, params: SelectionParams) -> list[Box3D]:
    """Greedy farthest-first selection with distance/azimuth pruning.

    Accepts candidates with d_i > d_th2 in descending-d_i order (ties broken
    by ascending center then label), pruning still-active candidates within
    d_th1 of each acceptance or with azimuth gap < theta_th, stopping at n_t.
    When nothing is accepted, falls back to the single farthest candidate in
    (d_th1, d_th2], or empty.
    """
    entries = _sorted_candidates(candidates)
    c = candidates.scene_center
    active = [True] * len(entries)
    selected: list[Box3D] = []
    for i, (d_i, box_i) in enumerate(entries):
        if not active[i]:
            continue
        if d_i <= params.d_th2:
            continue
        selected.append(box_i)
        d_prune = params.d_th1
        for j in range(i + 1, len(entries)):
            if not active[j]:
                continue
            box_j = entries[j][1]
            too_close = np.linalg.norm(box_j.center - box_i.center) < d_prune
            same_bearing = azimuth_difference(box_i, box_j, c) < params.theta_th
            if too_close or same_bearing:
                active[j] = False
        if len(selected) == params.n_t:
            break
    if not selected:
        for d_i, box_i in entries:  # already descending; first in band is the max
            if params.d_th1 < d_i <= params.d_th2:
                return [box_i]
    return selected


def prune_by_camera_distance(detections: list[Box3D], camera_position, d_th1: float) -> list[Box3D]:
    """Keep detections whose center is within d_th1 of the camera, order preserved."""
    if d_th1 <= 0:
        raise ValueError("d_th1 must be positive")
    cam = np.asarray(camera_position, dtype=float)
    return [b for b in detections if np.linalg.norm(b.center - cam) <= d_th1]


def box_iou_axis_aligned(a: Box3D, b: Box3D) -> float:
    lo = np.maximum(a.center - a.half_extents, b.center - b.half_extents)
    hi = np.minimum(a.center + a.half_extents, b.center + b.half_extents)
    inter = float(np.prod(np.maximum(hi - lo, 0.0)))
    if inter == 0.0:
        return 0.0
    vol_a = float(np.prod(2.0 * a.half_extents))
    vol_b = float(np.prod(2.0 * b.half_extents))
    return inter / (vol_a + vol_b - inter)


def fuse_detections(
    frames: list[tuple],
    iou_threshold: float = 0.25,
    d_th1: float = 3.0,
    scene_center=(0.0, 0.0, 0.0),
) -> CandidateSet:
    """Fuse per-frame detections into one global box map.

    Each frame is (camera_pose, boxes); boxes beyond d_th1 of that frame's
    camera are dropped first. Survivors are greedily clustered in input order
    by same-label axis-aligned IoU >= iou_threshold against any existing
    cluster member; each cluster emits a confidence-weighted mean box with
    max confidence.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    clusters: list[list[Box3D]] = []
    for pose, boxes in frames:
        cam = getattr(pose, "position", pose)
        for box in prune_by_camera_distance(list(boxes), cam, d_th1):
            placed = False
            for members in clusters:
                if members[0].label != box.label:
                    continue
                if max(box_iou_axis_aligned(box, m) for m in members) >= iou_threshold:
                    members.append(box)
                    placed = True
                    break
            if not placed:
                clusters.append([box])

    fused = []
    for members in clusters:
        w = np.array([m.confidence for m in members])
        total = float(w.sum())
        if total <= 0.0:  # all-zero confidences: plain mean
            w = np.ones(len(members))
            total = float(len(members))
        center = sum(wi * m.center for wi, m in zip(w, members)) / total
        half = sum(wi * m.half_extents for wi, m in zip(w, members)) / total
        yaw = float(sum(wi * m.yaw for wi, m in zip(w, members)) / total)
        fused.append(
            Box3D(
                label=members[0].label,
                center=center,
                half_extents=half,
                yaw=yaw,
                confidence=max(m.confidence for m in members),
            )
        )
    return CandidateSet(boxes=fused, scene_center=np.asarray(scene_center, dtype=float))


def write_annotation(path, scene_id: str, boxes: list[Box3D]) -> None:
    """Annotation file: {scene_id, boxes: [{label, center, half_extents, yaw, confidence}]}."""
    payload = {
        "scene_id": scene_id,
        "boxes": [
            {
                "label": b.label,
                "center": [float(v) for v in b.center],
                "half_extents": [float(v) for v in b.half_extents],
                "yaw": float(b.yaw),
                "confidence": float(b.confidence),
            }
            for b in boxes
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_annotation(path) -> tuple[str, list[Box3D]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    boxes = [
        Box3D(
            label=b["label"],
            center=b["center"],
            half_extents=b["half_extents"],
            yaw=b.get("yaw", 0.0),
            confidence=b.get("confidence", 1.0),
        )
        for b in payload["boxes"]
    ]
    return payload["scene_id"], boxes
